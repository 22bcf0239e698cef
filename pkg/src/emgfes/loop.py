"""Session execution: calibration recording and the closed-loop control loop.

Everything runs on a deterministic simulated timeline. Feature ticks land
every 9 ms exactly (18 samples at 2 kHz); plant ticks at 120 Hz land on
``(j * 1e6) // 120`` microseconds. Within a feature tick the order is:
synthesize EMG (with artifacts from any active pulse train), extract
features, predict, update the cursor with the step scale the FSM returned
last tick, step the FSM, then start any emitted pulse train. Plant ticks
that fall strictly between feature ticks integrate with the intent and
stimulation current held from the previous feature tick.
"""

from __future__ import annotations

import io
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .calibration import CalibrationSet, InsufficientData, Segment
from .config import ConfigError, CursorConfig, ReferenceConfig, RunConfig, _coerce, config_dict
from .cursor import CursorState, reference_position, update_cursor
from .fixtures import Fixture, get_fixture
from .gbdt import GbdtModel, train_gbdt
from .labels import Movement
from .lda import LdaModel, train_lda
from .persist import model_hash
from .plant import (
    PLANT_RATE_HZ,
    ArtifactInjector,
    MailboxIntent,
    PlaylistEntry,
    PulseScheduler,
    plant_step,
    playlist_duration,
    playlist_lookup,
    synth_emg,
)
from .sessionlog import SessionLog, SessionWriter, read_session
from .stim import StimFsm, StimParams, fsm_step
from .stream import SAMPLES_PER_SEGMENT, SEGMENT_PERIOD_US

LOG_HEADER_VERSION = 1


def feature_tick_us(k: int) -> int:
    return k * SEGMENT_PERIOD_US


def plant_tick_us(j: int) -> int:
    return (j * 1_000_000) // PLANT_RATE_HZ


def _emg_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0]))


def _intent_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1]))


def run_calibration(config: RunConfig, fixture: Fixture | None = None) -> CalibrationSet:
    """Record the fixture's calibration protocol into a labeled feature set.

    Features are labeled by the protocol block active at their tick; one
    contiguous segment is emitted per block (warmup ticks before the first
    full window produce no features).
    """
    fixture = fixture or get_fixture(config.fixture)
    blocks = fixture.calibration
    total_s = sum(b.duration_s for b in blocks)
    n_ticks = int(round(total_s * 1e6)) // SEGMENT_PERIOD_US
    if n_ticks == 0:
        raise InsufficientData("calibration protocol is empty")

    intent = fixture.make_calibration_intent()
    pipeline = config.pipeline.make_pipeline()
    rng = _emg_rng(config.seed)

    feats: list[np.ndarray] = []
    labels: list[int] = []
    for k in range(n_ticks):
        t_us = feature_tick_us(k)
        t_s = t_us / 1e6
        frame = synth_emg(intent.activations(t_s), fixture.muscle, rng, seq=k, timestamp_us=t_us)
        feat = pipeline.process(frame)
        if feat is None:
            continue
        block = intent.block_at(t_s)
        feats.append(feat.rms)
        labels.append(int(block.movement))

    if not feats:
        raise InsufficientData("calibration produced no features")
    label_arr = np.array(labels, dtype=int)
    segments = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            segments.append(Segment(Movement(labels[start]), start, i))
            start = i
    return CalibrationSet(
        features=np.vstack(feats),
        labels=label_arr,
        classes=fixture.movements,
        segments=tuple(segments),
    )


def train_model(config: RunConfig, cal: CalibrationSet) -> LdaModel | GbdtModel:
    if config.model == "lda":
        return train_lda(cal)
    return train_gbdt(cal)


@dataclass
class RunResult:
    """Closed-loop run output: the parsed log, its exact bytes, and wall-time stats."""

    log: SessionLog
    data: bytes
    tick_wall_s: np.ndarray
    wall_s: float

    @property
    def tick_p99_ms(self) -> float:
        return float(np.percentile(self.tick_wall_s, 99) * 1e3)


@dataclass(frozen=True)
class TickSnapshot:
    """Immutable per-tick state copy handed to observers (never shared
    mutable loop state)."""

    k: int
    t_us: int
    cursor_x: float
    cursor_y: float
    reference_x: float
    reference_y: float
    reference_label: int
    predicted_label: int | None
    fsm_state: int
    reading_iteration: int
    step_scale: float
    current_ma: float
    channel: int | None
    angle_deg: float


class UpdateRejected(Exception):
    """A live update failed validation; loop state is unchanged."""


class LoopSession:
    """One closed-loop run, stepped tick by tick.

    Owns every piece of mutable pipeline state; callers advance it with
    ``step()`` and may mutate parameters between ticks through the
    ``apply_*`` methods (atomic: a tick sees either the old or the new
    values, never a mix). ``run_closed_loop`` drives it to completion in
    one call; the gateway drives it paced to the wall clock.

    When ``intent`` is given it replaces the fixture's scripted/feedback
    intent (interactive sessions pass a ``MailboxIntent``). The log byte
    stream is fully determined by (config, seed, update sequence).
    """

    def __init__(
        self,
        config: RunConfig,
        model: LdaModel | GbdtModel | None = None,
        fixture: Fixture | None = None,
        intent=None,
    ):
        self.config = config
        self.fixture = fixture or get_fixture(config.fixture)
        if model is None:
            model = train_model(config, run_calibration(config, self.fixture))
        self.model = model
        self.mapping = config.cursor.task_mapping()
        self.playlist = tuple(PlaylistEntry(r.spec(), r.cycles) for r in config.reference)
        self.playlist_origin_s = 0.0
        self.duration_s = playlist_duration(self.playlist)
        self.n_ticks = int(round(self.duration_s * 1e6)) // SEGMENT_PERIOD_US
        if self.n_ticks == 0:
            raise InsufficientData("empty reference playlist")

        self.rng_emg = _emg_rng(config.seed)
        self.intent = intent if intent is not None else self.fixture.make_intent(
            self.playlist, _intent_rng(config.seed)
        )
        self.pipeline = config.pipeline.make_pipeline()
        self.plant = self.fixture.make_plant()
        self.fsm = StimFsm(params=config.stim)
        self.injector = ArtifactInjector()
        self.scheduler = PulseScheduler()
        self.cursor = CursorState(decay_factor=config.cursor.decay_factor)

        self.sink = io.BytesIO()
        header = {
            "version": LOG_HEADER_VERSION,
            "config": config_dict(config),
            "seed": config.seed,
            "fixture": self.fixture.name,
            "model_hash": model_hash(model),
            "classes": [m.name.lower() for m in model.classes],
            "sample_rate_hz": 2000,
            "samples_per_segment": SAMPLES_PER_SEGMENT,
            "plant_rate_hz": PLANT_RATE_HZ,
        }
        self.writer = SessionWriter(self.sink, header)

        self.k = 0
        self.held_scale = 1.0
        self.activations = np.zeros(len(Movement))
        self.active_cmd = None
        self.angle_deg = self.plant.angle_deg
        self._logged_violation = None
        self._next_plant_tick = 1
        self._plant_dt = 1.0 / PLANT_RATE_HZ
        self._tick_wall: list[float] = []
        self._wall_start = time.perf_counter()
        self._finished = False

    def _stim_current_at(self, t_s: float) -> tuple[float, object]:
        cmd = self.active_cmd
        if cmd is None:
            return 0.0, None
        if cmd.timestamp_s <= t_s < cmd.timestamp_s + cmd.duration_s:
            return cmd.current_ma, cmd.channel
        return 0.0, None

    def _advance_plant(self, up_to_us: int, inclusive: bool) -> None:
        while True:
            t_j = plant_tick_us(self._next_plant_tick)
            if t_j > up_to_us or (t_j == up_to_us and not inclusive):
                return
            current, channel = self._stim_current_at(t_j / 1e6)
            self.angle_deg = plant_step(
                self.plant, self.activations, current, channel, self._plant_dt
            )
            self.writer.angle(t_j, self.angle_deg)
            self._next_plant_tick += 1

    def step(self) -> TickSnapshot:
        """Run one feature tick; see the module docstring for the in-tick order."""
        t0 = time.perf_counter()
        k = self.k
        t_us = feature_tick_us(k)
        t_s = t_us / 1e6

        self._advance_plant(t_us, inclusive=False)

        self.activations = self.intent.activations(t_s)
        frame = synth_emg(
            self.activations, self.fixture.muscle, self.rng_emg, seq=k, timestamp_us=t_us
        )
        if self.config.stim_enabled:
            frame = self.injector.apply(
                frame, self.scheduler.pulses_in(k * SAMPLES_PER_SEGMENT, SAMPLES_PER_SEGMENT)
            )
        self.writer.frame(t_us, k, frame.samples)

        located = playlist_lookup(self.playlist, t_s - self.playlist_origin_s)
        if located is not None:
            spec, t_local = located
            rx, ry, ref_label = reference_position(spec, t_local, self.mapping)
        else:
            rx, ry, ref_label = 0.0, 0.0, Movement.REST
        self.writer.reference(t_us, rx, ry, ref_label)

        predicted = None
        feat = self.pipeline.process(frame)
        if feat is not None:
            self.writer.features(t_us, feat.rms, feat.blank_fraction, feat.all_blanked)
            pred = self.model.predict(feat.rms)
            predicted = int(pred.label)
            self.writer.prediction(t_us, pred.label, pred.scores)
            self.cursor = update_cursor(
                self.cursor, pred.label, self.mapping, step_scale=self.held_scale, timestamp_us=t_us
            )
            self.writer.cursor(t_us, self.cursor.x, self.cursor.y, self.held_scale)
            if self.config.stim_enabled:
                prev_state = self.fsm.state
                self.fsm, cmd, self.held_scale = fsm_step(self.fsm, self.cursor.y, t_s)
                if cmd is not None:
                    self.writer.stim(
                        t_us,
                        cmd.channel,
                        cmd.current_ma,
                        cmd.pulse_freq_hz,
                        cmd.pulse_width_us,
                        cmd.duration_s,
                    )
                    self.scheduler.start(t_s, cmd.duration_s, cmd.pulse_freq_hz)
                    self.active_cmd = cmd
                if self.fsm.state != prev_state:
                    self.writer.fsm(t_us, int(self.fsm.state), self.fsm.reading_iteration)
                if (
                    self.fsm.last_violation is not None
                    and self.fsm.last_violation is not self._logged_violation
                ):
                    self._logged_violation = self.fsm.last_violation
                    self.writer.event(
                        t_us,
                        {"kind": "safety_violation", "detail": str(self.fsm.last_violation)},
                    )
            else:
                self.held_scale = 1.0
            if hasattr(self.intent, "observe"):
                self.intent.observe(
                    self.cursor.x, self.cursor.y, frozen=(self.held_scale == 0.0)
                )

        self._advance_plant(t_us, inclusive=True)
        self.k = k + 1
        self._tick_wall.append(time.perf_counter() - t0)
        current, channel = self._stim_current_at(t_s)
        return TickSnapshot(
            k=k,
            t_us=t_us,
            cursor_x=self.cursor.x,
            cursor_y=self.cursor.y,
            reference_x=rx,
            reference_y=ry,
            reference_label=int(ref_label),
            predicted_label=predicted,
            fsm_state=int(self.fsm.state),
            reading_iteration=self.fsm.reading_iteration,
            step_scale=self.held_scale,
            current_ma=current,
            channel=None if channel is None else int(channel),
            angle_deg=self.angle_deg,
        )

    # -- live updates (called between ticks; next tick sees the new values) --

    def apply_param_update(self, payload: dict, seq: int) -> dict:
        """Merge partial stimulation/cursor parameter changes, validate, swap.

        Returns the applied changes; raises ``UpdateRejected`` (state
        untouched) when validation fails. The change is logged with its seq.
        """
        if not isinstance(payload, dict) or not payload:
            raise UpdateRejected("param update payload must be a non-empty object")
        unknown = set(payload) - {"stim", "cursor"}
        if unknown:
            raise UpdateRejected(f"unknown parameter group(s): {sorted(unknown)}")
        applied: dict = {}
        new_config = self.config
        try:
            if "stim" in payload:
                stim_fields = dict(payload["stim"])
                merged = {**asdict(self.config.stim), **stim_fields}
                new_stim = _coerce(StimParams, merged, "stim")
                new_config = replace(new_config, stim=new_stim)
                applied["stim"] = stim_fields
            if "cursor" in payload:
                cursor_fields = dict(payload["cursor"])
                merged = {**asdict(self.config.cursor), **cursor_fields}
                new_cursor_cfg = _coerce(CursorConfig, merged, "cursor")
                new_config = replace(new_config, cursor=new_cursor_cfg)
                applied["cursor"] = cursor_fields
        except (ConfigError, TypeError, ValueError) as e:
            raise UpdateRejected(str(e)) from e
        if not applied:
            raise UpdateRejected("param update carried no changes")
        self.config = new_config
        self.fsm = replace(self.fsm, params=new_config.stim)
        self.cursor = replace(self.cursor, decay_factor=new_config.cursor.decay_factor)
        self.mapping = new_config.cursor.task_mapping()
        self.writer.param(feature_tick_us(self.k), seq, applied)
        return applied

    def apply_intent_input(self, payload: dict, seq: int) -> None:
        """Route an interactive effort level to the mailbox intent."""
        if not isinstance(self.intent, MailboxIntent):
            raise UpdateRejected("session intent is not interactive")
        try:
            movement = Movement[str(payload["movement"]).upper()]
            level = float(payload["level"])
        except (KeyError, ValueError) as e:
            raise UpdateRejected(f"bad intent input: {e}") from e
        if not 0.0 <= level <= 1.0:
            raise UpdateRejected("level must be in [0, 1]")
        self.intent.set(movement, level)
        self.writer.event(
            feature_tick_us(self.k),
            {"kind": "intent_input", "seq": seq, "movement": movement.name.lower(), "level": level},
        )

    def apply_reference_update(self, payload: dict, seq: int) -> None:
        """Swap the reference playlist; the new one starts at the next tick."""
        try:
            entries = payload["reference"]
            if not isinstance(entries, (list, tuple)) or not entries:
                raise UpdateRejected("reference must be a non-empty list")
            configs = tuple(_coerce(ReferenceConfig, dict(e), "reference") for e in entries)
        except UpdateRejected:
            raise
        except (ConfigError, TypeError, ValueError, KeyError) as e:
            raise UpdateRejected(f"bad reference spec: {e}") from e
        self.config = replace(self.config, reference=configs)
        self.playlist = tuple(PlaylistEntry(r.spec(), r.cycles) for r in configs)
        self.playlist_origin_s = feature_tick_us(self.k) / 1e6
        self.writer.param(feature_tick_us(self.k), seq, {"reference": [dict(e) for e in entries]})

    def finish(self) -> RunResult:
        """Close the log and package the run output."""
        if not self._finished:
            self.writer.close()
            self._finished = True
        data = self.sink.getvalue()
        return RunResult(
            log=read_session(io.BytesIO(data)),
            data=data,
            tick_wall_s=np.asarray(self._tick_wall) if self._tick_wall else np.zeros(1),
            wall_s=time.perf_counter() - self._wall_start,
        )


def run_closed_loop(
    config: RunConfig,
    model: LdaModel | GbdtModel | None = None,
    fixture: Fixture | None = None,
) -> RunResult:
    """Run the full loop over the configured reference playlist.

    Trains a model from a fresh calibration recording when none is given.
    The log byte stream is fully determined by (config, seed).
    """
    session = LoopSession(config, model=model, fixture=fixture)
    for _ in range(session.n_ticks):
        session.step()
    return session.finish()
