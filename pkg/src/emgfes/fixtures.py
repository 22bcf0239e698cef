"""Built-in simulated participant profiles.

Each fixture bundles everything a session needs about the (simulated)
person: the muscle gain map driving synthetic EMG, the ankle plant, the
calibration protocol, a reference playlist for the closed-loop run, the
intent behavior, and the stimulation preset. Profiles are constructed so
the closed-loop outcomes are known by design:

- ``synthetic_healthy``: strong voluntary ankle (20 deg dorsiflexion /
  16 deg plantarflexion), all four movements, no stimulation needed.
- ``synthetic_s1``: drop-foot analog. Voluntary dorsiflexion is capped at
  1 deg (5% of the 20 deg reference range); the dorsiflexion stimulation
  channel adds up to ~6.9 deg at full recruitment, so a sustained-
  contraction session raises dorsiflexion range by roughly a third of the
  reference range. The recruitment sigmoid (threshold 18 mA, slope 3.5 mA)
  saturates above ~35 mA, keeping the added range insensitive to the exact
  trigger current.
- ``synthetic_s1_proportional``: same participant, proportional preset
  (low start threshold, short dwell times) and a randomized 10-ramp
  dorsi-/plantarflexion sequence with distinct plateau levels.
- ``synthetic_s2``: stronger stimulation response (up to ~8.4 deg) on the
  dorsiflexion channel, no plantarflexion response (channel ceiling 0),
  linear model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .calibration import Block, default_protocol
from .config import ConfigError, CursorConfig, ReferenceConfig, RunConfig, load_stim_preset
from .cursor import DEFAULT_DECAY_FACTOR, TaskMapping
from .labels import Movement, StimChannel
from .plant import (
    AnklePlant,
    BlockIntent,
    FeedbackIntent,
    MuscleModel,
    PlaylistEntry,
    ScriptedIntent,
)
from .stim import StimParams
from .stream import N_CHANNELS

CHANNELS_PER_MOVEMENT = 8


def movement_gain_matrix(
    movements: tuple[Movement, ...], gain: float = 3.0
) -> np.ndarray:
    """Disjoint 8-channel gain support per movement (separable by design)."""
    g = np.zeros((len(Movement), N_CHANNELS))
    slot = 0
    for m in movements:
        if m == Movement.REST:
            continue
        g[int(m), slot * CHANNELS_PER_MOVEMENT : (slot + 1) * CHANNELS_PER_MOVEMENT] = gain
        slot += 1
    return g


@dataclass(frozen=True)
class Fixture:
    """One simulated participant plus their session protocol."""

    name: str
    movements: tuple[Movement, ...]
    muscle: MuscleModel
    plant: AnklePlant  # template; copied per run
    stim: StimParams
    model: str
    reference: tuple[ReferenceConfig, ...]
    intent_kind: str = "feedback"  # "feedback" | "scripted"
    servo_gain: float = 5.0
    dither_std: float = 0.0
    decay_factor: float = DEFAULT_DECAY_FACTOR
    calibration: tuple[Block, ...] = ()
    mapping: dict = field(
        default_factory=lambda: {"up": "dorsiflexion", "down": "plantarflexion"}
    )

    def make_plant(self) -> AnklePlant:
        return replace(self.plant, angle_deg=0.0)

    def task_mapping(self) -> TaskMapping:
        return CursorConfig(mapping=self.mapping).task_mapping()

    def make_intent(self, playlist: tuple[PlaylistEntry, ...], rng: np.random.Generator):
        if self.intent_kind == "scripted":
            return ScriptedIntent(playlist, dither_std=self.dither_std, rng=rng)
        return FeedbackIntent(
            playlist,
            self.task_mapping(),
            servo_gain=self.servo_gain,
            dither_std=self.dither_std,
            rng=rng,
        )

    def make_calibration_intent(self) -> BlockIntent:
        return BlockIntent(self.calibration)

    def playlist(self) -> tuple[PlaylistEntry, ...]:
        return tuple(PlaylistEntry(spec=r.spec(), cycles=r.cycles) for r in self.reference)

    def run_config(self, **overrides) -> RunConfig:
        base = dict(
            fixture=self.name,
            model=self.model,
            stim=self.stim,
            cursor=CursorConfig(decay_factor=self.decay_factor, mapping=self.mapping),
            reference=self.reference,
        )
        base.update(overrides)
        return RunConfig(**base)


def _ramp(movement: str, peak: float = 1.0, **kw) -> ReferenceConfig:
    return ReferenceConfig(movement=movement, kind="ramp", levels=(peak,), **kw)


def synthetic_healthy() -> Fixture:
    movements = (
        Movement.REST,
        Movement.DORSIFLEXION,
        Movement.PLANTARFLEXION,
        Movement.INVERSION,
        Movement.EVERSION,
    )
    plant = AnklePlant(
        voluntary_gain_deg={
            Movement.DORSIFLEXION: 20.0,
            Movement.PLANTARFLEXION: 16.0,
        },
        stim_gain_deg={StimChannel.DORSIFLEXION: 8.0, StimChannel.PLANTARFLEXION: 6.0},
        recruitment_threshold_ma={StimChannel.DORSIFLEXION: 20.0, StimChannel.PLANTARFLEXION: 20.0},
        recruitment_slope_ma={StimChannel.DORSIFLEXION: 4.0, StimChannel.PLANTARFLEXION: 4.0},
    )
    reference = tuple(
        _ramp(m, rate_hz=0.1, hold_s=2.5, rest_s=2.5, cycles=5)
        for m in ("dorsiflexion", "plantarflexion", "inversion", "eversion")
    )
    return Fixture(
        name="synthetic_healthy",
        movements=movements,
        muscle=MuscleModel(gain=movement_gain_matrix(movements)),
        plant=plant,
        stim=StimParams(),
        model="gbdt",
        reference=reference,
        servo_gain=6.0,
        decay_factor=15.0,
        calibration=default_protocol(movements),
        mapping={
            "up": "dorsiflexion",
            "down": "plantarflexion",
            "right": "inversion",
            "left": "eversion",
        },
    )


def _drop_foot_movements() -> tuple[Movement, ...]:
    return (Movement.REST, Movement.DORSIFLEXION, Movement.PLANTARFLEXION)


def synthetic_s1() -> Fixture:
    movements = _drop_foot_movements()
    stim, model = load_stim_preset("s1_sustained")
    plant = AnklePlant(
        voluntary_gain_deg={
            Movement.DORSIFLEXION: 1.0,
            Movement.PLANTARFLEXION: 2.4,
        },
        stim_gain_deg={StimChannel.DORSIFLEXION: 6.9, StimChannel.PLANTARFLEXION: 1.2},
        recruitment_threshold_ma={StimChannel.DORSIFLEXION: 18.0, StimChannel.PLANTARFLEXION: 16.0},
        recruitment_slope_ma={StimChannel.DORSIFLEXION: 3.5, StimChannel.PLANTARFLEXION: 3.5},
    )
    # Three 10 s contraction ramps separated by 10 s rest.
    reference = (_ramp("dorsiflexion", rate_hz=0.05, hold_s=6.0, rest_s=10.0, cycles=3),)
    return Fixture(
        name="synthetic_s1",
        movements=movements,
        muscle=MuscleModel(gain=movement_gain_matrix(movements)),
        plant=plant,
        stim=stim,
        model=model,
        reference=reference,
        servo_gain=5.0,
        calibration=default_protocol(movements),
    )


def synthetic_s1_proportional() -> Fixture:
    base = synthetic_s1()
    stim, model = load_stim_preset("s1_proportional")
    # Randomized ramp sequence (2 DF, 1 PF, 4 DF, 3 PF) at distinct plateaus.
    plateaus = [
        ("dorsiflexion", 0.95),
        ("dorsiflexion", 0.45),
        ("plantarflexion", 0.9),
        ("dorsiflexion", 0.7),
        ("dorsiflexion", 0.3),
        ("dorsiflexion", 0.55),
        ("dorsiflexion", 0.85),
        ("plantarflexion", 0.5),
        ("plantarflexion", 0.7),
        ("plantarflexion", 0.35),
    ]
    reference = tuple(
        _ramp(m, peak=p, rate_hz=0.1, hold_s=0.5, rest_s=1.5) for m, p in plateaus
    )
    return replace(
        base,
        name="synthetic_s1_proportional",
        stim=stim,
        model=model,
        reference=reference,
        # Scripted effort follows the plateaus exactly; the cursor transit
        # through intermediate levels is what spreads commands over bins.
        intent_kind="scripted",
    )


def synthetic_s2() -> Fixture:
    movements = _drop_foot_movements()
    stim, model = load_stim_preset("s2_sustained")
    plant = AnklePlant(
        voluntary_gain_deg={
            Movement.DORSIFLEXION: 0.4,
            Movement.PLANTARFLEXION: 0.3,
        },
        stim_gain_deg={StimChannel.DORSIFLEXION: 8.4, StimChannel.PLANTARFLEXION: 0.0},
        recruitment_threshold_ma={StimChannel.DORSIFLEXION: 30.0, StimChannel.PLANTARFLEXION: 30.0},
        recruitment_slope_ma={StimChannel.DORSIFLEXION: 6.0, StimChannel.PLANTARFLEXION: 6.0},
    )
    reference = (_ramp("dorsiflexion", rate_hz=0.05, hold_s=6.0, rest_s=10.0, cycles=3),)
    return Fixture(
        name="synthetic_s2",
        movements=movements,
        muscle=MuscleModel(gain=movement_gain_matrix(movements)),
        plant=plant,
        stim=stim,
        model=model,
        reference=reference,
        servo_gain=5.0,
        calibration=default_protocol(movements),
    )


FIXTURES = {
    "synthetic_healthy": synthetic_healthy,
    "synthetic_s1": synthetic_s1,
    "synthetic_s1_proportional": synthetic_s1_proportional,
    "synthetic_s2": synthetic_s2,
}


def list_fixtures() -> tuple[str, ...]:
    return tuple(sorted(FIXTURES))


def get_fixture(name: str) -> Fixture:
    try:
        return FIXTURES[name]()
    except KeyError as exc:
        raise ConfigError(
            f"unknown fixture {name!r}; available: {', '.join(sorted(FIXTURES))}"
        ) from exc
