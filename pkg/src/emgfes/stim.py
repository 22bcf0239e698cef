"""Three-state closed-loop stimulation controller.

The controller cycles Reading -> Stimulation -> Waiting -> Reading. While
Reading it samples the predicted cursor every tick; once the cursor
magnitude crosses the start threshold (and the post-waiting boost schedule
has played out) it emits a pulse-train command whose current is
proportional to the cursor position, then dwells in Stimulation and
Waiting for the configured durations. The cursor is frozen outside the
Reading state; to compensate, the first cursor updates after Waiting are
boosted and decay geometrically back to the normal step size over
``controller_speed`` iterations.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .labels import StimChannel
from .stream import SEGMENT_RATE_HZ

PULSE_WIDTH_US = 300
WAVEFORM = "biphasic_symmetric"
ENERGY_LIMIT_MJ = 300.0
TRIGGER_PULSE_US = 5  # stimulator trigger square wave, metadata only


class FsmState(enum.IntEnum):
    READING = 0
    STIMULATION = 1
    WAITING = 2


class SafetyViolation(Exception):
    def __init__(self, kind: str, detail: str):
        self.kind = kind  # "energy" | "current"
        super().__init__(f"{kind}: {detail}")


@dataclass
class StimParams:
    """Stimulation controller settings (per-participant calibration values)."""

    max_current_df_ma: float = 53.0
    max_current_pf_ma: float = 42.0
    start_threshold_pct: float = 50.0
    stim_time_s: float = 1.2
    wait_time_s: float = 0.5
    pulse_freq_hz: float = 25.0
    controller_speed: int = 8
    pulse_width_us: int = PULSE_WIDTH_US
    waveform: str = WAVEFORM
    energy_limit_mj: float = ENERGY_LIMIT_MJ

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.max_current_df_ma < 0 or self.max_current_pf_ma < 0:
            raise ValueError("max currents must be >= 0")
        if not 0.0 < self.start_threshold_pct <= 100.0:
            raise ValueError("start_threshold_pct must be in (0, 100]")
        if self.stim_time_s <= 0 or self.wait_time_s <= 0:
            raise ValueError("state durations must be > 0")
        if self.pulse_freq_hz <= 0:
            raise ValueError("pulse_freq_hz must be > 0")
        if not (isinstance(self.controller_speed, int) and 1 <= self.controller_speed <= 10):
            raise ValueError("controller_speed must be an integer in 1..10")

    def max_current_ma(self, channel: StimChannel) -> float:
        if channel == StimChannel.DORSIFLEXION:
            return self.max_current_df_ma
        return self.max_current_pf_ma


@dataclass(frozen=True)
class StimCommand:
    """One pulse-train request sent to the stimulator."""

    channel: StimChannel
    current_ma: float
    pulse_freq_hz: float
    pulse_width_us: int
    duration_s: float
    timestamp_s: float = 0.0


@dataclass
class StimFsm:
    """Controller state owned by the control loop.

    fsm_step is called once per feature tick; state dwell is counted in
    whole ticks, rounding the configured duration to the nearest tick.
    """

    params: StimParams = field(default_factory=StimParams)
    state: FsmState = FsmState.READING
    state_entry_s: float = 0.0
    ticks_in_state: int = 0
    tick_rate_hz: float = SEGMENT_RATE_HZ
    # Start with the boost schedule already exhausted: no boost (and no
    # trigger hold-off) before the first stimulation of a session.
    reading_iteration: int = field(default=-1)
    last_violation: SafetyViolation | None = field(default=None)

    def __post_init__(self):
        if self.reading_iteration < 0:
            self.reading_iteration = self.params.controller_speed

    def dwell_ticks(self, duration_s: float) -> int:
        return max(1, int(duration_s * self.tick_rate_hz + 0.5))


def speed_multiplier(controller_speed: int) -> float:
    """Smoothing-coefficient multiplier 1.0 - (speed - 1) * 0.1, bounded to [0.1, 1]."""
    m = (11 - controller_speed) / 10.0
    return min(1.0, max(0.1, m))


def speed_schedule(controller_speed: int, reading_iteration: int) -> float:
    """Cursor step-size boost at the given Reading iteration.

    Starts at 1/m (the smoothing coefficient divided by the multiplier) and
    decays geometrically to 1.0 over ``controller_speed`` iterations.
    """
    if reading_iteration < 0:
        raise ValueError("reading_iteration must be >= 0")
    m = speed_multiplier(controller_speed)
    frac = min(reading_iteration, controller_speed) / controller_speed
    return (1.0 / m) ** (1.0 - frac)


def map_current(cursor_y: float, params: StimParams) -> tuple[StimChannel, float]:
    """Map the Y-axis cursor to (channel, current): dorsiflexion for positive
    values, plantarflexion for negative; current proportional to |y| up to the
    channel maximum."""
    if abs(cursor_y) > 1.0:
        raise ValueError("cursor_y must be in [-1, 1]")
    channel = StimChannel.DORSIFLEXION if cursor_y >= 0 else StimChannel.PLANTARFLEXION
    limit = params.max_current_ma(channel)
    current = min(limit, max(0.0, abs(cursor_y) * limit))
    return channel, current


def check_safety(cmd: StimCommand, params: StimParams, assumed_load_ohm: float = 1000.0) -> None:
    """Mirror of the stimulator's hardware limits: per-pulse energy of the
    biphasic pair through an assumed resistive load, plus the per-channel
    current ceiling. Raises SafetyViolation."""
    limit = params.max_current_ma(cmd.channel)
    if cmd.current_ma > limit:
        raise SafetyViolation("current", f"{cmd.current_ma:.1f} mA > channel max {limit:.1f} mA")
    amps = cmd.current_ma / 1000.0
    pulse_s = 2.0 * cmd.pulse_width_us * 1e-6  # biphasic: two phases per pulse
    energy_mj = amps * amps * assumed_load_ohm * pulse_s * 1000.0
    if energy_mj > params.energy_limit_mj:
        raise SafetyViolation(
            "energy", f"{energy_mj:.1f} mJ per pulse > limit {params.energy_limit_mj:.0f} mJ"
        )


def fsm_step(fsm: StimFsm, cursor_y: float, now: float) -> tuple[StimFsm, StimCommand | None, float]:
    """Advance the controller by one tick.

    Returns the (mutated) fsm, an emitted command if the trigger fired, and
    the step scale for the next cursor update: the boost schedule value
    while Reading, 0.0 (cursor frozen) during Stimulation and Waiting.

    The trigger is armed only once the boost schedule has completed
    (reading_iteration >= controller_speed), so each Reading phase lets the
    cursor catch up before the next intensity is sampled.
    """
    p = fsm.params
    if fsm.state == FsmState.READING:
        armed = fsm.reading_iteration >= p.controller_speed
        if armed and abs(cursor_y) * 100.0 >= p.start_threshold_pct:
            channel, current = map_current(cursor_y, p)
            cmd = StimCommand(
                channel=channel,
                current_ma=current,
                pulse_freq_hz=p.pulse_freq_hz,
                pulse_width_us=p.pulse_width_us,
                duration_s=p.stim_time_s,
                timestamp_s=now,
            )
            try:
                check_safety(cmd, p)
            except SafetyViolation as violation:
                fsm.last_violation = violation
                fsm.state = FsmState.WAITING
                fsm.state_entry_s = now
                fsm.ticks_in_state = 0
                return fsm, None, 0.0
            fsm.state = FsmState.STIMULATION
            fsm.state_entry_s = now
            fsm.ticks_in_state = 0
            return fsm, cmd, 0.0
        scale = speed_schedule(p.controller_speed, fsm.reading_iteration)
        fsm.reading_iteration += 1
        return fsm, None, scale
    if fsm.state == FsmState.STIMULATION:
        fsm.ticks_in_state += 1
        if fsm.ticks_in_state >= fsm.dwell_ticks(p.stim_time_s):
            fsm.state = FsmState.WAITING
            fsm.state_entry_s = now
            fsm.ticks_in_state = 0
        return fsm, None, 0.0
    # WAITING
    fsm.ticks_in_state += 1
    if fsm.ticks_in_state >= fsm.dwell_ticks(p.wait_time_s):
        fsm.state = FsmState.READING
        fsm.state_entry_s = now
        fsm.ticks_in_state = 0
        # The transition tick consumes schedule index 0 so the next cursor
        # update gets the full boost and the schedule advances one slot per
        # update from here on.
        fsm.reading_iteration = 1
        return fsm, None, speed_schedule(p.controller_speed, 0)
    return fsm, None, 0.0
