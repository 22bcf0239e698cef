"""2D cursor control: prediction-to-position smoothing, reference trajectory
generation for the tracking tests, and threshold labeling of positions.

The cursor lives in [-1, 1]^2. Each predicted movement selects a target
(+-1.0 on its mapped axis, the origin for rest) and the cursor closes a
fixed fraction of the remaining gap per update: with decay factor d and
step scale s, ``pos += s * (target - pos) / d`` on both axes, so the
off-target axis decays toward zero under the same law.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .labels import Direction, Movement

DEFAULT_DECAY_FACTOR = 50.0


@dataclass(frozen=True)
class TaskMapping:
    """Assignment of cursor directions to movement labels.

    Directions may be left unmapped for reduced movement sets. Each mapped
    direction must carry a distinct non-rest label.
    """

    directions: dict[Direction, Movement] = field(
        default_factory=lambda: {
            Direction.UP: Movement.DORSIFLEXION,
            Direction.DOWN: Movement.PLANTARFLEXION,
            Direction.RIGHT: Movement.INVERSION,
            Direction.LEFT: Movement.EVERSION,
        }
    )

    def __post_init__(self):
        labels = [m for m in self.directions.values()]
        if Movement.REST in labels:
            raise ValueError("rest cannot be mapped to a direction")
        if len(set(labels)) != len(labels):
            raise ValueError("each direction needs a distinct label")

    def direction_of(self, label: Movement) -> Direction | None:
        for d, m in self.directions.items():
            if m == label:
                return d
        return None

    def target_of(self, label: Movement) -> tuple[float, float]:
        """Cursor end position assigned to a predicted label."""
        if label == Movement.REST:
            return (0.0, 0.0)
        d = self.direction_of(label)
        if d is None:
            raise ValueError(f"{label.name} is not mapped to a direction")
        return (d.sign, 0.0) if d.axis == 0 else (0.0, d.sign)

    @property
    def labels(self) -> tuple[Movement, ...]:
        return (Movement.REST,) + tuple(self.directions.values())


@dataclass(frozen=True)
class CursorState:
    x: float = 0.0
    y: float = 0.0
    decay_factor: float = DEFAULT_DECAY_FACTOR
    last_update_us: int = 0

    def __post_init__(self):
        if self.decay_factor < 1.0:
            raise ValueError("decay_factor must be >= 1")


def update_cursor(
    state: CursorState,
    label: Movement,
    mapping: TaskMapping,
    step_scale: float = 1.0,
    timestamp_us: int | None = None,
) -> CursorState:
    """One smoothing step toward the label's target; result clamped to the unit square."""
    tx, ty = mapping.target_of(label)
    k = step_scale / state.decay_factor
    x = min(1.0, max(-1.0, state.x + k * (tx - state.x)))
    y = min(1.0, max(-1.0, state.y + k * (ty - state.y)))
    return replace(
        state,
        x=x,
        y=y,
        last_update_us=state.last_update_us if timestamp_us is None else timestamp_us,
    )


@dataclass(frozen=True)
class ReferenceSpec:
    """Reference cursor trajectory for one movement.

    ``ramp``: a 1/rate_hz cycle of rise, hold at the plateau level
    (``levels[0]``, default 1.0), fall, rest; rise and fall share the time
    left after the hold and rest phases.
    ``two_stage_trapezoid``: rise to each level in turn with a 10 s hold at
    each, then back to rest (2 s transitions between levels).
    """

    movement: Movement
    kind: str = "ramp"  # "ramp" | "two_stage_trapezoid"
    rate_hz: float = 0.1
    hold_s: float = 0.5
    rest_s: float = 0.5
    levels: tuple[float, ...] = (1.0,)
    level_hold_s: float = 10.0
    transition_s: float = 2.0

    def __post_init__(self):
        if self.kind not in ("ramp", "two_stage_trapezoid"):
            raise ValueError(f"unknown reference kind {self.kind!r}")
        if self.movement == Movement.REST:
            raise ValueError("reference movement must be a non-rest label")
        if not self.levels or any(not 0.0 < lv <= 1.0 for lv in self.levels):
            raise ValueError("levels must be nonempty with values in (0, 1]")
        if self.kind == "ramp":
            if self.hold_s < 0.5 or self.rest_s < 0.5:
                raise ValueError("hold and rest must last at least 0.5 s")
            if self.hold_s + self.rest_s >= self.cycle_s:
                raise ValueError("hold + rest exceed the ramp cycle")

    @property
    def cycle_s(self) -> float:
        if self.kind == "ramp":
            return 1.0 / self.rate_hz
        ramps = len(self.levels) + 1
        return ramps * self.transition_s + len(self.levels) * self.level_hold_s + self.rest_s

    def magnitude(self, t: float) -> float:
        """Activation level in [0, 1] at time t (periodic)."""
        t = t % self.cycle_s
        if self.kind == "ramp":
            peak = self.levels[0]
            rise = (self.cycle_s - self.hold_s - self.rest_s) / 2.0
            if t < rise:
                return peak * t / rise
            t -= rise
            if t < self.hold_s:
                return peak
            t -= self.hold_s
            if t < rise:
                return peak * (1.0 - t / rise)
            return 0.0
        # two-stage trapezoid: 0 -> levels[0] -> ... -> levels[-1] -> 0
        prev = 0.0
        for level in self.levels:
            if t < self.transition_s:
                return prev + (level - prev) * t / self.transition_s
            t -= self.transition_s
            if t < self.level_hold_s:
                return level
            t -= self.level_hold_s
            prev = level
        if t < self.transition_s:
            return prev * (1.0 - t / self.transition_s)
        return 0.0


def reference_position(
    spec: ReferenceSpec, t: float, mapping: TaskMapping
) -> tuple[float, float, Movement]:
    """Reference cursor position and its threshold label at time t >= 0."""
    if t < 0:
        raise ValueError("t must be >= 0")
    d = mapping.direction_of(spec.movement)
    if d is None:
        raise ValueError(f"{spec.movement.name} is not mapped")
    value = d.sign * spec.magnitude(t)
    x, y = (value, 0.0) if d.axis == 0 else (0.0, value)
    return x, y, label_reference(x, y, mapping)


def label_reference(x: float, y: float, mapping: TaskMapping) -> Movement:
    """Label a position by its dominant axis: movement when |coord| > 0.5, rest otherwise."""
    if abs(x) <= 0.5 and abs(y) <= 0.5:
        return Movement.REST
    if abs(y) >= abs(x):
        d = Direction.UP if y > 0 else Direction.DOWN
    else:
        d = Direction.RIGHT if x > 0 else Direction.LEFT
    label = mapping.directions.get(d)
    return label if label is not None else Movement.REST
