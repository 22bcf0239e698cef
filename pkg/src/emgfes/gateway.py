"""Network boundary for a running closed loop.

Streams live loop state to clients and accepts intent input and parameter
updates. The loop itself runs on a dedicated thread (``LoopRunner``) paced
to the wall clock; all network traffic goes through bounded queues, so the
tick never blocks on I/O and a slow client is dropped rather than allowed
to stall the loop.

Two transports carry the same JSON messages:

* WebSocket (text frames) on the bind address, with protocol-level pings
  every ``heartbeat_s``. Plain HTTP requests on the same port are answered
  with static files from ``static_dir``, which is how the browser UI is
  delivered.
* Length-prefixed TCP on ``tcp_port`` (default: WebSocket port + 1) for
  headless clients: each frame is a 4-byte big-endian byte count followed
  by one UTF-8 JSON message.

Wire schema, all messages ``{"type": ..., "seq": ..., "payload": ...}``:

``StateUpdate`` (server -> all clients, every ``decimation``-th tick)
    payload: ``tick``, ``t_us``, ``cursor`` {x, y}, ``reference`` {x, y},
    ``reference_label``, ``predicted`` (movement name or null),
    ``fsm_state`` ("reading" | "stimulation" | "waiting"),
    ``reading_iteration``, ``step_scale``, ``current_ma``,
    ``channel`` (stim channel name or null), ``angle_deg``.
    ``seq`` counts broadcast messages; every client sees the same stream.

``ParamUpdate`` (client -> server)
    payload: ``{"stim": {...}}`` and/or ``{"cursor": {...}}`` with any
    subset of StimParams / cursor fields. Applied atomically between ticks;
    answered with ``Ack`` or ``Error`` carrying the client's ``seq``.

``IntentInput`` (client -> server)
    payload: ``{"movement": "dorsiflexion", "level": 0.0..1.0}``. Only
    valid for sessions driven by an interactive (mailbox) intent.

``RefSpecUpdate`` (client -> server)
    payload: ``{"reference": [{"movement": ..., "kind": ..., ...}, ...]}``;
    replaces the reference playlist starting at the next tick.

``Ack`` (server -> sender): ``{"type": "Ack", "seq": <echoed>}``.

``Error`` (server -> sender): ``{"type": "Error", "seq": <echoed or null>,
    "payload": {"reason": ...}}``. Malformed JSON earns an Error but leaves
    the connection open.
"""

from __future__ import annotations

import json
import mimetypes
import os
import queue
import socket
import struct
import threading
import time
from http import HTTPStatus
from pathlib import Path

from websockets.datastructures import Headers
from websockets.exceptions import ConnectionClosed
from websockets.http11 import Response
from websockets.sync.server import serve as ws_serve

from .labels import Movement, StimChannel
from .loop import SEGMENT_PERIOD_US, LoopSession, TickSnapshot, UpdateRejected
from .stim import FsmState

DEFAULT_BIND = "127.0.0.1:8765"
BIND_ENV_VAR = "EMGFES_BIND"
DEFAULT_DECIMATION = 3  # 111 Hz ticks -> ~37 Hz broadcast
HEARTBEAT_S = 5.0
CLIENT_QUEUE_MESSAGES = 64  # ~1.7 s of decimated StateUpdates
MAX_FRAME_BYTES = 1 << 20

_CLIENT_TYPES = {"ParamUpdate", "IntentInput", "RefSpecUpdate"}


class BindFailure(Exception):
    """The requested bind address is unusable (in use, unresolvable...)."""


def parse_bind(bind_address: str | None) -> tuple[str, int]:
    """Resolve ``host:port`` from the argument or the environment."""
    addr = bind_address or os.environ.get(BIND_ENV_VAR) or DEFAULT_BIND
    host, sep, port = addr.rpartition(":")
    if not sep or not host:
        raise BindFailure(f"bind address must be host:port, got {addr!r}")
    try:
        return host, int(port)
    except ValueError as e:
        raise BindFailure(f"bad port in bind address {addr!r}") from e


def state_update(snap: TickSnapshot, seq: int) -> dict:
    """StateUpdate wire message for one tick snapshot."""
    return {
        "type": "StateUpdate",
        "seq": seq,
        "payload": {
            "tick": snap.k,
            "t_us": snap.t_us,
            "cursor": {"x": snap.cursor_x, "y": snap.cursor_y},
            "reference": {"x": snap.reference_x, "y": snap.reference_y},
            "reference_label": Movement(snap.reference_label).name.lower(),
            "predicted": (
                None
                if snap.predicted_label is None
                else Movement(snap.predicted_label).name.lower()
            ),
            "fsm_state": FsmState(snap.fsm_state).name.lower(),
            "reading_iteration": snap.reading_iteration,
            "step_scale": snap.step_scale,
            "current_ma": snap.current_ma,
            "channel": (
                None if snap.channel is None else StimChannel(snap.channel).name.lower()
            ),
            "angle_deg": snap.angle_deg,
        },
    }


def _ack(seq) -> dict:
    return {"type": "Ack", "seq": seq}


def _error(seq, reason: str) -> dict:
    return {"type": "Error", "seq": seq, "payload": {"reason": reason}}


class _Subscriber:
    """One client's outbound lane: a bounded queue plus a drop callback."""

    def __init__(self, maxsize: int, on_drop):
        self.q: queue.Queue = queue.Queue(maxsize=maxsize)
        self.on_drop = on_drop

    def offer(self, message: dict) -> bool:
        try:
            self.q.put_nowait(message)
            return True
        except queue.Full:
            return False


class LoopRunner(threading.Thread):
    """Drives a LoopSession on its own thread, paced to the wall clock.

    Client messages land in ``inbox`` and are applied between ticks (each
    gets an Ack/Error reply through the callback it carried); every
    ``decimation``-th snapshot is fanned out to subscriber queues. A full
    subscriber queue drops that subscriber, never delays the tick.
    """

    def __init__(
        self,
        session: LoopSession,
        decimation: int = DEFAULT_DECIMATION,
        pace: bool = True,
    ):
        super().__init__(name="loop-runner", daemon=True)
        if decimation < 1:
            raise ValueError("decimation must be >= 1")
        self.session = session
        self.decimation = decimation
        self.pace = pace
        self.inbox: queue.Queue = queue.Queue()
        self.result = None
        self.error: BaseException | None = None
        self._subs: dict[int, _Subscriber] = {}
        self._subs_lock = threading.Lock()
        self._next_sid = 0
        self._stop_requested = threading.Event()
        self._broadcast_seq = 0

    # -- subscriber management -------------------------------------------
    def subscribe(self, on_drop, maxsize: int = CLIENT_QUEUE_MESSAGES) -> tuple[int, queue.Queue]:
        sub = _Subscriber(maxsize, on_drop)
        with self._subs_lock:
            sid = self._next_sid
            self._next_sid += 1
            self._subs[sid] = sub
        return sid, sub.q

    def unsubscribe(self, sid: int) -> None:
        with self._subs_lock:
            self._subs.pop(sid, None)

    def reply_to(self, sid: int, message: dict) -> None:
        """Queue a reply to one subscriber (dropped clients lose replies)."""
        with self._subs_lock:
            sub = self._subs.get(sid)
        if sub is not None and not sub.offer(message):
            self._drop(sid, sub)

    def submit(self, kind: str, payload, seq, sid: int) -> None:
        """Queue a client update for application before the next tick."""
        self.inbox.put((kind, payload, seq, sid))

    def stop(self) -> None:
        self._stop_requested.set()

    def _drop(self, sid: int, sub: _Subscriber) -> None:
        self.unsubscribe(sid)
        # The close handshake can block; keep it off the tick thread.
        threading.Thread(target=sub.on_drop, daemon=True).start()

    def _broadcast(self, message: dict) -> None:
        with self._subs_lock:
            subs = list(self._subs.items())
        for sid, sub in subs:
            if not sub.offer(message):
                self._drop(sid, sub)

    # -- update application ----------------------------------------------
    def _apply(self, kind: str, payload, seq, sid: int) -> None:
        try:
            if kind == "ParamUpdate":
                self.session.apply_param_update(payload, seq)
            elif kind == "IntentInput":
                self.session.apply_intent_input(payload, seq)
            elif kind == "RefSpecUpdate":
                self.session.apply_reference_update(payload, seq)
            else:
                raise UpdateRejected(f"unknown message type {kind!r}")
        except UpdateRejected as e:
            self.reply_to(sid, _error(seq, str(e)))
            return
        self.reply_to(sid, _ack(seq))

    def _drain_inbox(self, reason: str | None = None) -> None:
        while True:
            try:
                kind, payload, seq, sid = self.inbox.get_nowait()
            except queue.Empty:
                return
            if reason is None:
                self._apply(kind, payload, seq, sid)
            else:
                self.reply_to(sid, _error(seq, reason))

    # -- main loop ---------------------------------------------------------
    def run(self) -> None:
        period_s = SEGMENT_PERIOD_US / 1e6
        next_t = time.perf_counter()
        try:
            for _ in range(self.session.n_ticks):
                if self._stop_requested.is_set():
                    break
                self._drain_inbox()
                if self.pace:
                    next_t += period_s
                    delay = next_t - time.perf_counter()
                    if delay > 0:
                        time.sleep(delay)
                    else:
                        next_t = time.perf_counter()  # lagging: don't compound
                snap = self.session.step()
                if snap.k % self.decimation == 0:
                    self._broadcast(state_update(snap, self._broadcast_seq))
                    self._broadcast_seq += 1
            self._drain_inbox("session finished")
            self.result = self.session.finish()
        except BaseException as e:  # surface on .error, don't kill silently
            self.error = e
            try:
                self.result = self.session.finish()
            except Exception:
                pass


def _route_text(runner: LoopRunner, raw, sid: int) -> None:
    """Parse one client message and hand it to the runner (or reply Error)."""
    try:
        msg = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        runner.reply_to(sid, _error(None, f"malformed JSON: {e}"))
        return
    if not isinstance(msg, dict):
        runner.reply_to(sid, _error(None, "message must be a JSON object"))
        return
    mtype = msg.get("type")
    seq = msg.get("seq")
    if mtype not in _CLIENT_TYPES:
        runner.reply_to(
            sid, _error(seq, f"unsupported message type {mtype!r}; expected one of {sorted(_CLIENT_TYPES)}")
        )
        return
    runner.submit(mtype, msg.get("payload"), seq, sid)


class GatewayServer:
    """WebSocket + length-prefixed-TCP front end over one LoopRunner."""

    def __init__(
        self,
        runner: LoopRunner,
        bind_address: str | None = None,
        tcp_port: int | None = None,
        static_dir: str | Path | None = None,
        heartbeat_s: float = HEARTBEAT_S,
        client_queue: int = CLIENT_QUEUE_MESSAGES,
    ):
        self.runner = runner
        self.host, self.port = parse_bind(bind_address)
        self._tcp_port_req = tcp_port
        self.static_dir = Path(static_dir).resolve() if static_dir else None
        self.heartbeat_s = heartbeat_s
        self.client_queue = client_queue
        self._ws_server = None
        self._tcp_socket: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._closed = threading.Event()

    # -- lifecycle ---------------------------------------------------------
    def start(self) -> "GatewayServer":
        try:
            self._ws_server = ws_serve(
                self._handle_ws,
                self.host,
                self.port,
                process_request=self._process_request,
                ping_interval=self.heartbeat_s,
                ping_timeout=self.heartbeat_s,
            )
        except OSError as e:
            raise BindFailure(f"cannot bind websocket to {self.host}:{self.port}: {e}") from e
        self.port = self._ws_server.socket.getsockname()[1]
        tcp_port = self._tcp_port_req if self._tcp_port_req is not None else self.port + 1
        try:
            self._tcp_socket = socket.create_server((self.host, tcp_port))
        except OSError as e:
            self._ws_server.shutdown()
            raise BindFailure(f"cannot bind tcp to {self.host}:{tcp_port}: {e}") from e
        self.tcp_port = self._tcp_socket.getsockname()[1]
        if not self.runner.is_alive():
            self.runner.start()
        for target, name in (
            (self._ws_server.serve_forever, "gateway-ws"),
            (self._tcp_accept_loop, "gateway-tcp"),
        ):
            t = threading.Thread(target=target, name=name, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def close(self) -> None:
        if self._closed.is_set():
            return
        self._closed.set()
        if self._ws_server is not None:
            self._ws_server.shutdown()
        if self._tcp_socket is not None:
            try:
                self._tcp_socket.close()
            except OSError:
                pass

    def wait(self, timeout: float | None = None):
        """Block until the loop finishes; returns its RunResult."""
        self.runner.join(timeout)
        if self.runner.error is not None:
            raise self.runner.error
        return self.runner.result

    # -- WebSocket + static assets ------------------------------------------
    def _process_request(self, connection, request):
        if "upgrade" in request.headers.get("Connection", "").lower():
            return None  # proceed with the WebSocket handshake
        return self._static_response(request.path)

    def _static_response(self, path: str) -> Response:
        def plain(status: HTTPStatus, text: str) -> Response:
            body = text.encode()
            return Response(
                status.value,
                status.phrase,
                Headers(
                    [("Content-Type", "text/plain"), ("Content-Length", str(len(body)))]
                ),
                body,
            )

        if self.static_dir is None:
            return plain(HTTPStatus.NOT_FOUND, "no static assets configured\n")
        rel = path.split("?", 1)[0].lstrip("/") or "index.html"
        target = (self.static_dir / rel).resolve()
        if not target.is_relative_to(self.static_dir):
            return plain(HTTPStatus.FORBIDDEN, "forbidden\n")
        if target.is_dir():
            target = target / "index.html"
        if not target.is_file():
            return plain(HTTPStatus.NOT_FOUND, f"not found: {path}\n")
        body = target.read_bytes()
        ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        return Response(
            HTTPStatus.OK.value,
            HTTPStatus.OK.phrase,
            Headers([("Content-Type", ctype), ("Content-Length", str(len(body)))]),
            body,
        )

    def _handle_ws(self, connection) -> None:
        sid, outbox = self.runner.subscribe(connection.close, maxsize=self.client_queue)
        writer = threading.Thread(
            target=self._ws_writer, args=(connection, outbox), daemon=True
        )
        writer.start()
        try:
            for raw in connection:
                _route_text(self.runner, raw, sid)
        except ConnectionClosed:
            pass
        finally:
            self.runner.unsubscribe(sid)
            outbox.put(None)  # unblock the writer

    @staticmethod
    def _ws_writer(connection, outbox: queue.Queue) -> None:
        while True:
            message = outbox.get()
            if message is None:
                return
            try:
                connection.send(json.dumps(message))
            except (ConnectionClosed, OSError):
                return

    # -- length-prefixed TCP -------------------------------------------------
    def _tcp_accept_loop(self) -> None:
        while not self._closed.is_set():
            try:
                conn, _ = self._tcp_socket.accept()
            except OSError:
                return
            threading.Thread(
                target=self._handle_tcp, args=(conn,), name="gateway-tcp-client", daemon=True
            ).start()

    def _handle_tcp(self, conn: socket.socket) -> None:
        sid, outbox = self.runner.subscribe(conn.close, maxsize=self.client_queue)
        writer = threading.Thread(
            target=self._tcp_writer, args=(conn, outbox), daemon=True
        )
        writer.start()
        try:
            while True:
                frame = _read_frame(conn)
                if frame is None:
                    break
                _route_text(self.runner, frame, sid)
        except OSError:
            pass
        finally:
            self.runner.unsubscribe(sid)
            outbox.put(None)
            try:
                conn.close()
            except OSError:
                pass

    @staticmethod
    def _tcp_writer(conn: socket.socket, outbox: queue.Queue) -> None:
        while True:
            message = outbox.get()
            if message is None:
                return
            data = json.dumps(message).encode()
            try:
                conn.sendall(struct.pack(">I", len(data)) + data)
            except OSError:
                return


def _read_frame(conn: socket.socket) -> bytes | None:
    header = _read_exact(conn, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_BYTES:
        raise OSError(f"frame of {length} bytes exceeds limit")
    return _read_exact(conn, length)


def _read_exact(conn: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


def serve(bind_address: str | None, loop_handle, **options) -> None:
    """Serve one closed-loop session until it completes.

    ``loop_handle`` is a LoopSession (wrapped in a paced LoopRunner) or a
    prepared LoopRunner. Keyword options are forwarded to GatewayServer.
    The session's RunResult is left on ``runner.result``.
    """
    if isinstance(loop_handle, LoopRunner):
        runner = loop_handle
    elif isinstance(loop_handle, LoopSession):
        runner = LoopRunner(loop_handle)
    else:
        raise TypeError(f"loop_handle must be LoopSession or LoopRunner, got {type(loop_handle)!r}")
    server = GatewayServer(runner, bind_address, **options)
    server.start()
    try:
        server.wait()
    finally:
        server.close()
