"""Binary session recording and replay.

One file per session: a JSON header (config snapshot, seed, fixture id,
model hash) followed by length-prefixed typed records, append-only and
flushed at least once per simulated second. All timestamps are session
(simulation) time in integer microseconds, so a fixed (config, seed) pair
produces a byte-identical file.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .labels import Movement, StimChannel
from .stream import N_CHANNELS, SAMPLES_PER_SEGMENT

MAGIC = b"EMGS"
VERSION = 1
FLUSH_INTERVAL_US = 1_000_000

REC_FRAME = 1
REC_FEATURES = 2
REC_PREDICTION = 3
REC_CURSOR = 4
REC_FSM = 5
REC_STIM = 6
REC_ANGLE = 7
REC_REFERENCE = 8
REC_PARAM = 9
REC_EVENT = 10


class IoFailure(Exception):
    pass


class CorruptLog(Exception):
    pass


@dataclass
class SessionWriter:
    """Append-only record sink over any binary stream."""

    sink: BinaryIO
    header: dict
    _closed: bool = field(default=False, init=False)
    _last_flush_us: int = field(default=0, init=False)

    def __post_init__(self):
        blob = json.dumps(self.header, sort_keys=True, separators=(",", ":")).encode()
        try:
            self.sink.write(MAGIC)
            self.sink.write(struct.pack("<II", VERSION, len(blob)))
            self.sink.write(blob)
        except (OSError, ValueError) as exc:
            raise IoFailure(str(exc)) from exc

    def record(self, rec_type: int, timestamp_us: int, payload: bytes) -> None:
        if self._closed:
            raise IoFailure("write to closed sink")
        body = struct.pack("<Bq", rec_type, timestamp_us) + payload
        try:
            self.sink.write(struct.pack("<I", len(body)))
            self.sink.write(body)
            if timestamp_us - self._last_flush_us >= FLUSH_INTERVAL_US:
                self.sink.flush()
                self._last_flush_us = timestamp_us
        except (OSError, ValueError) as exc:
            raise IoFailure(str(exc)) from exc

    def close(self) -> None:
        if not self._closed:
            try:
                self.sink.flush()
            except (OSError, ValueError) as exc:
                raise IoFailure(str(exc)) from exc
            finally:
                self._closed = True

    # Typed helpers; each fixes the wire layout of one record type.

    def frame(self, timestamp_us: int, seq: int, samples: np.ndarray) -> None:
        self.record(
            REC_FRAME,
            timestamp_us,
            struct.pack("<I", seq) + samples.astype("<i2").tobytes(),
        )

    def features(
        self, timestamp_us: int, rms: np.ndarray, blank_fraction: float, all_blanked: bool
    ) -> None:
        self.record(
            REC_FEATURES,
            timestamp_us,
            struct.pack("<fB", blank_fraction, int(all_blanked))
            + rms.astype("<f4").tobytes(),
        )

    def prediction(self, timestamp_us: int, label: Movement, scores: np.ndarray) -> None:
        self.record(
            REC_PREDICTION,
            timestamp_us,
            struct.pack("<B", int(label)) + scores.astype("<f4").tobytes(),
        )

    def cursor(self, timestamp_us: int, x: float, y: float, step_scale: float) -> None:
        self.record(REC_CURSOR, timestamp_us, struct.pack("<ddf", x, y, step_scale))

    def fsm(self, timestamp_us: int, state: int, reading_iteration: int) -> None:
        self.record(
            REC_FSM, timestamp_us, struct.pack("<BI", state, reading_iteration)
        )

    def stim(
        self,
        timestamp_us: int,
        channel: StimChannel,
        current_ma: float,
        pulse_freq_hz: float,
        pulse_width_us: int,
        duration_s: float,
    ) -> None:
        self.record(
            REC_STIM,
            timestamp_us,
            struct.pack(
                "<BffHf", int(channel), current_ma, pulse_freq_hz, pulse_width_us, duration_s
            ),
        )

    def angle(self, timestamp_us: int, angle_deg: float) -> None:
        self.record(REC_ANGLE, timestamp_us, struct.pack("<d", angle_deg))

    def reference(self, timestamp_us: int, x: float, y: float, label: Movement) -> None:
        self.record(REC_REFERENCE, timestamp_us, struct.pack("<ddB", x, y, int(label)))

    def param(self, timestamp_us: int, seq: int, payload: dict) -> None:
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        self.record(REC_PARAM, timestamp_us, struct.pack("<I", seq) + blob)

    def event(self, timestamp_us: int, payload: dict) -> None:
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        self.record(REC_EVENT, timestamp_us, blob)


@dataclass(frozen=True)
class SessionLog:
    """Parsed session: header plus per-stream column arrays."""

    header: dict
    frames: list  # (t_us, seq, samples int16 (32, 18))
    features_t_us: np.ndarray
    features_rms: np.ndarray  # (n, 32)
    features_blank_fraction: np.ndarray
    features_all_blanked: np.ndarray
    predictions_t_us: np.ndarray
    predictions_label: np.ndarray
    predictions_scores: np.ndarray  # (n, k)
    cursor_t_us: np.ndarray
    cursor_xy: np.ndarray  # (n, 2)
    cursor_step_scale: np.ndarray
    fsm_t_us: np.ndarray
    fsm_state: np.ndarray
    fsm_reading_iteration: np.ndarray
    stim_t_us: np.ndarray
    stim_channel: np.ndarray
    stim_current_ma: np.ndarray
    stim_pulse_freq_hz: np.ndarray
    stim_duration_s: np.ndarray
    angle_t_us: np.ndarray
    angle_deg: np.ndarray
    reference_t_us: np.ndarray
    reference_xy: np.ndarray
    reference_label: np.ndarray
    params: list  # (t_us, seq, dict)
    events: list  # (t_us, dict)


def read_session(source: BinaryIO | str | Path) -> SessionLog:
    """Parse a session file; raises CorruptLog on structural damage."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            return read_session(fh)
    data = source.read()
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise CorruptLog("bad magic")
    version, hlen = struct.unpack("<II", buf.read(8))
    if version != VERSION:
        raise CorruptLog(f"unsupported version {version}")
    try:
        header = json.loads(buf.read(hlen).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptLog(f"bad header: {exc}") from exc

    frames = []
    feats: list = []
    preds: list = []
    cursors: list = []
    fsms: list = []
    stims: list = []
    angles: list = []
    refs: list = []
    params: list = []
    events: list = []
    while True:
        raw = buf.read(4)
        if not raw:
            break
        if len(raw) < 4:
            raise CorruptLog("truncated record length")
        (length,) = struct.unpack("<I", raw)
        body = buf.read(length)
        if len(body) < length:
            raise CorruptLog("truncated record body")
        rec_type, t_us = struct.unpack_from("<Bq", body)
        payload = body[9:]
        if rec_type == REC_FRAME:
            (seq,) = struct.unpack_from("<I", payload)
            samples = np.frombuffer(payload[4:], dtype="<i2").reshape(
                N_CHANNELS, SAMPLES_PER_SEGMENT
            )
            frames.append((t_us, seq, samples))
        elif rec_type == REC_FEATURES:
            bf, ab = struct.unpack_from("<fB", payload)
            rms = np.frombuffer(payload[5:], dtype="<f4")
            feats.append((t_us, rms, bf, bool(ab)))
        elif rec_type == REC_PREDICTION:
            (label,) = struct.unpack_from("<B", payload)
            scores = np.frombuffer(payload[1:], dtype="<f4")
            preds.append((t_us, label, scores))
        elif rec_type == REC_CURSOR:
            x, y, scale = struct.unpack_from("<ddf", payload)
            cursors.append((t_us, x, y, scale))
        elif rec_type == REC_FSM:
            state, it = struct.unpack_from("<BI", payload)
            fsms.append((t_us, state, it))
        elif rec_type == REC_STIM:
            ch, cur, freq, width, dur = struct.unpack_from("<BffHf", payload)
            stims.append((t_us, ch, cur, freq, dur))
        elif rec_type == REC_ANGLE:
            (angle,) = struct.unpack_from("<d", payload)
            angles.append((t_us, angle))
        elif rec_type == REC_REFERENCE:
            x, y, label = struct.unpack_from("<ddB", payload)
            refs.append((t_us, x, y, label))
        elif rec_type == REC_PARAM:
            (seq,) = struct.unpack_from("<I", payload)
            params.append((t_us, seq, json.loads(payload[4:].decode())))
        elif rec_type == REC_EVENT:
            events.append((t_us, json.loads(payload.decode())))
        else:
            raise CorruptLog(f"unknown record type {rec_type}")

    def col(rows: list, i: int, dtype=float) -> np.ndarray:
        return np.array([r[i] for r in rows], dtype=dtype)

    return SessionLog(
        header=header,
        frames=frames,
        features_t_us=col(feats, 0, np.int64),
        features_rms=(
            np.stack([r[1] for r in feats]) if feats else np.zeros((0, N_CHANNELS))
        ),
        features_blank_fraction=col(feats, 2),
        features_all_blanked=col(feats, 3, bool),
        predictions_t_us=col(preds, 0, np.int64),
        predictions_label=col(preds, 1, np.int64),
        predictions_scores=(np.stack([r[2] for r in preds]) if preds else np.zeros((0, 0))),
        cursor_t_us=col(cursors, 0, np.int64),
        cursor_xy=(
            np.column_stack([col(cursors, 1), col(cursors, 2)])
            if cursors
            else np.zeros((0, 2))
        ),
        cursor_step_scale=col(cursors, 3),
        fsm_t_us=col(fsms, 0, np.int64),
        fsm_state=col(fsms, 1, np.int64),
        fsm_reading_iteration=col(fsms, 2, np.int64),
        stim_t_us=col(stims, 0, np.int64),
        stim_channel=col(stims, 1, np.int64),
        stim_current_ma=col(stims, 2),
        stim_pulse_freq_hz=col(stims, 3),
        stim_duration_s=col(stims, 4),
        angle_t_us=col(angles, 0, np.int64),
        angle_deg=col(angles, 1),
        reference_t_us=col(refs, 0, np.int64),
        reference_xy=(
            np.column_stack([col(refs, 1), col(refs, 2)]) if refs else np.zeros((0, 2))
        ),
        reference_label=col(refs, 3, np.int64),
        params=params,
        events=events,
    )
