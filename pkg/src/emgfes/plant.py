"""Simulated participant and limb.

An intent signal (scripted from a reference playlist, or interactive)
drives two things: synthetic 32-channel EMG whose per-channel amplitude is
modulated by a muscle gain matrix, and an ankle joint angle that responds
to voluntary intent plus stimulation current through a recruitment curve
and first-order dynamics. Optional artifact injection reproduces the
amplifier discharge transients seen around stimulation pulses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cursor import ReferenceSpec
from .labels import Movement, StimChannel
from .stream import N_CHANNELS, SAMPLE_RATE_HZ, SAMPLES_PER_SEGMENT, EmgFrame

PLANT_RATE_HZ = 120
ANGLE_LIMIT_DEG = 30.0
# Spike amplitude is chosen so that the second filtered response sample
# already clears the 200 ADU detection threshold by > 4 sigma of active EMG
# noise: the band-pass group delay spreads the pulse over ~3 samples, and a
# borderline early sample would escape the channel vote and leak into the
# feature window whenever a pulse straddles a segment boundary.
ARTIFACT_AMPLITUDE_ADU = 900.0
# Slow amplifier discharge after each pulse. The starting amplitude is kept
# a small fraction of the spike: the discharge must stay under the blanking
# threshold (otherwise every tail sample re-triggers detection and the masks
# chain until nothing is left to compute features from).
ARTIFACT_TAIL_TAU_S = 0.020
ARTIFACT_TAIL_FRACTION = 0.005

# Sign of each movement's contribution to the sagittal ankle angle:
# dorsiflexion positive, plantarflexion negative, inversion/eversion are
# off-axis and leave this angle unchanged.
ANGLE_SIGN = {
    Movement.REST: 0.0,
    Movement.DORSIFLEXION: 1.0,
    Movement.PLANTARFLEXION: -1.0,
    Movement.INVERSION: 0.0,
    Movement.EVERSION: 0.0,
}
STIM_ANGLE_SIGN = {
    StimChannel.DORSIFLEXION: 1.0,
    StimChannel.PLANTARFLEXION: -1.0,
}


class OrnsteinUhlenbeck:
    """Slow multiplicative effort dither for scripted intent.

    Exact discretization so the update is stepsize-invariant; correlation
    time longer than the RMS window makes the decoder see sustained, not
    averaged-out, effort fluctuations.
    """

    def __init__(self, std: float, tau_s: float, rng: np.random.Generator):
        if std < 0 or tau_s <= 0:
            raise ValueError("std must be >= 0 and tau_s > 0")
        self.std = std
        self.tau_s = tau_s
        self.rng = rng
        self.value = 0.0
        self._last_t: float | None = None

    def sample(self, t: float) -> float:
        if self.std == 0.0:
            return 0.0
        if self._last_t is None:
            self._last_t = t
            return self.value
        dt = t - self._last_t
        if dt < 0:
            raise ValueError("time must be monotone")
        if dt > 0:
            decay = math.exp(-dt / self.tau_s)
            noise = self.std * math.sqrt(1.0 - decay * decay)
            self.value = self.value * decay + noise * self.rng.standard_normal()
            self._last_t = t
        return self.value


@dataclass(frozen=True)
class PlaylistEntry:
    """One reference spec repeated for a number of cycles."""

    spec: ReferenceSpec
    cycles: int = 1

    def __post_init__(self):
        if self.cycles < 1:
            raise ValueError("cycles must be >= 1")

    @property
    def duration_s(self) -> float:
        return self.cycles * self.spec.cycle_s


def playlist_duration(entries: tuple[PlaylistEntry, ...]) -> float:
    return sum(e.duration_s for e in entries)


def playlist_lookup(
    entries: tuple[PlaylistEntry, ...], t: float
) -> tuple[ReferenceSpec, float] | None:
    """Active spec and cycle-local time at session time t, None when done."""
    offset = 0.0
    for entry in entries:
        if t < offset + entry.duration_s:
            return entry.spec, (t - offset) % entry.spec.cycle_s
        offset += entry.duration_s
    return None


class ScriptedIntent:
    """Follows a reference playlist, optionally with effort dither."""

    def __init__(
        self,
        entries: tuple[PlaylistEntry, ...],
        dither_std: float = 0.0,
        dither_tau_s: float = 0.4,
        rng: np.random.Generator | None = None,
    ):
        if dither_std > 0 and rng is None:
            raise ValueError("dither requires an rng")
        self.entries = tuple(entries)
        self._dither = (
            OrnsteinUhlenbeck(dither_std, dither_tau_s, rng) if dither_std > 0 else None
        )

    def activations(self, t: float) -> np.ndarray:
        a = np.zeros(len(Movement))
        located = playlist_lookup(self.entries, t)
        if located is None:
            return a
        spec, t_local = located
        if spec.movement == Movement.REST:
            return a
        m = spec.magnitude(t_local)
        if self._dither is not None:
            m = m * (1.0 + self._dither.sample(t))
        a[int(spec.movement)] = min(1.0, max(0.0, m))
        return a


class BlockIntent:
    """Holds a fixed activation level per protocol block (calibration use)."""

    def __init__(self, blocks):
        # blocks: sequence with .movement, .level, .duration_s
        self.blocks = tuple(blocks)

    def block_at(self, t: float):
        offset = 0.0
        for b in self.blocks:
            if t < offset + b.duration_s:
                return b
            offset += b.duration_s
        return None

    def activations(self, t: float) -> np.ndarray:
        a = np.zeros(len(Movement))
        b = self.block_at(t)
        if b is not None and b.movement != Movement.REST:
            a[int(b.movement)] = b.level
        return a


class FeedbackIntent:
    """Closes the visual loop: effort chases the reference through the
    feedback cursor.

    The control loop reports the predicted cursor after every update via
    ``observe``; ``activations`` then integrates the effort on the active
    reference movement proportionally to the gap between the reference
    magnitude and the observed cursor component along that movement's
    direction. While the cursor is frozen (stimulation/waiting states,
    flagged by the loop) integration pauses, the way a participant holds a
    contraction while waiting for the cursor to unfreeze. Effort leaks
    toward zero whenever the reference is at rest.
    """

    def __init__(
        self,
        entries: tuple[PlaylistEntry, ...],
        mapping,
        servo_gain: float = 3.0,
        leak_tau_s: float = 0.4,
        dither_std: float = 0.0,
        dither_tau_s: float = 0.4,
        rng: np.random.Generator | None = None,
    ):
        if servo_gain <= 0 or leak_tau_s <= 0:
            raise ValueError("servo_gain and leak_tau_s must be > 0")
        if dither_std > 0 and rng is None:
            raise ValueError("dither requires an rng")
        self.entries = tuple(entries)
        self.mapping = mapping
        self.servo_gain = servo_gain
        self.leak_tau_s = leak_tau_s
        self.effort = 0.0
        self._dither = (
            OrnsteinUhlenbeck(dither_std, dither_tau_s, rng) if dither_std > 0 else None
        )
        self._cursor = (0.0, 0.0)
        self._frozen = False
        self._last_t: float | None = None

    def observe(self, x: float, y: float, frozen: bool = False) -> None:
        self._cursor = (x, y)
        self._frozen = frozen

    def _component(self, movement: Movement) -> float:
        d = self.mapping.direction_of(movement)
        if d is None:
            return 0.0
        value = self._cursor[0] if d.axis == 0 else self._cursor[1]
        return value * d.sign

    def activations(self, t: float) -> np.ndarray:
        dt = 0.0 if self._last_t is None else max(0.0, t - self._last_t)
        self._last_t = t
        a = np.zeros(len(Movement))
        located = playlist_lookup(self.entries, t)
        spec = located[0] if located is not None else None
        target = spec.magnitude(located[1]) if located is not None else 0.0
        if spec is None or spec.movement == Movement.REST or target == 0.0:
            self.effort *= math.exp(-dt / self.leak_tau_s) if dt > 0 else 1.0
            if self.effort < 1e-9:
                self.effort = 0.0
            return a
        if not self._frozen:
            error = target - self._component(spec.movement)
            self.effort = min(1.0, max(0.0, self.effort + self.servo_gain * error * dt))
        level = self.effort
        if self._dither is not None:
            level = min(1.0, max(0.0, level * (1.0 + self._dither.sample(t))))
        a[int(spec.movement)] = level
        return a


class MailboxIntent:
    """Interactive intent: the control loop writes the latest requested
    movement and level, the simulator reads it once per tick."""

    def __init__(self):
        self.movement = Movement.REST
        self.level = 0.0

    def set(self, movement: Movement, level: float) -> None:
        self.movement = movement
        self.level = min(1.0, max(0.0, level))

    def activations(self, t: float) -> np.ndarray:
        a = np.zeros(len(Movement))
        if self.movement != Movement.REST:
            a[int(self.movement)] = self.level
        return a


@dataclass
class MuscleModel:
    """Spatial RMS gain per movement plus noise floor, in ADU."""

    gain: np.ndarray  # (movements, channels), rest row zero
    baseline_noise_adu: float = 10.0
    activation_noise_adu: float = 10.0
    crosstalk: float = 0.0

    def __post_init__(self):
        g = np.asarray(self.gain, dtype=float)
        if g.shape != (len(Movement), N_CHANNELS):
            raise ValueError(f"gain must be {(len(Movement), N_CHANNELS)}")
        if (g < 0).any():
            raise ValueError("gains must be >= 0")
        if not 0.0 <= self.crosstalk < 1.0:
            raise ValueError("crosstalk must be in [0, 1)")
        self.gain = g

    def effective_gain(self) -> np.ndarray:
        if self.crosstalk == 0.0:
            return self.gain
        active = self.gain[1:]
        blended = (1.0 - self.crosstalk) * active + self.crosstalk * active.mean(
            axis=0, keepdims=True
        )
        out = self.gain.copy()
        out[1:] = blended
        return out


def synth_emg(
    intent_activations: np.ndarray,
    model: MuscleModel,
    rng: np.random.Generator,
    seq: int,
    timestamp_us: int,
    n_samples: int = SAMPLES_PER_SEGMENT,
) -> EmgFrame:
    """One EMG segment: zero-mean Gaussian noise with per-channel standard
    deviation sigma0 + sigma1 * sum_m gain[m, c] * a_m."""
    a = np.asarray(intent_activations, dtype=float)
    sigma = model.baseline_noise_adu + model.activation_noise_adu * (
        model.effective_gain().T @ a
    )
    raw = rng.standard_normal((N_CHANNELS, n_samples)) * sigma[:, None]
    samples = np.clip(np.rint(raw), -32768, 32767).astype(np.int16)
    return EmgFrame(seq=seq, timestamp_us=timestamp_us, samples=samples)


class ArtifactInjector:
    """Adds stimulation artifacts: a charge-balanced biphasic spike on a
    fixed channel subset at each pulse, followed by an exponential recovery
    tail modeling slow amplifier discharge.

    Each pulse injects +A at the pulse sample and -A two samples later (one
    sample of interphase gap), with the leading polarity alternating between
    pulses. The balanced pair carries almost no low-frequency energy, so the
    band-pass filter settles within the 15 ms post-artifact blanking span
    instead of ringing through the high-pass edge into the unmasked gaps.
    The tail starts after the second phase at ``tail_fraction`` of the spike
    and decays with ``tail_tau_s``; it must stay below the blanking
    threshold or detection re-triggers on the tail and the masks chain.

    Detection happens on filtered samples as they arrive, so the response
    prefix matters: every sample must sit either well under the threshold
    (harmless if it precedes the first detection) or well over it (detected
    despite EMG noise in the channel vote). Samples near the threshold leak
    past blanking for one feature tick when a pulse lands on the last
    samples of a segment and the response peak arrives with the next one.
    """

    def __init__(
        self,
        channels: np.ndarray | None = None,
        amplitude_adu: float = ARTIFACT_AMPLITUDE_ADU,
        tail_tau_s: float = ARTIFACT_TAIL_TAU_S,
        tail_fraction: float = ARTIFACT_TAIL_FRACTION,
        sample_rate_hz: int = SAMPLE_RATE_HZ,
    ):
        if channels is None:
            channels = np.arange(20)
        self.channels = np.asarray(channels, dtype=int)
        if self.channels.size < N_CHANNELS // 2:
            raise ValueError("artifact must hit at least half the channels")
        self.amplitude_adu = amplitude_adu
        self.tail_fraction = tail_fraction
        self.decay = math.exp(-1.0 / (tail_tau_s * sample_rate_hz))
        self.polarity = 1.0
        self.tail = np.zeros(N_CHANNELS)
        # Pulse actions that fall past the end of the current segment:
        # {offset_into_next_segment: [("spike", amp) | ("tail", amp), ...]}
        self._carry: dict[int, list[tuple[str, float]]] = {}

    def apply(self, frame: EmgFrame, pulse_offsets: list[int]) -> EmgFrame:
        """Return a copy of the frame with artifacts added at the given
        sample offsets (within [0, n_samples))."""
        n = frame.samples.shape[1]
        art = np.zeros((N_CHANNELS, n))
        sched = self._carry
        self._carry = {}
        for o in pulse_offsets:
            a = self.polarity * self.amplitude_adu
            self.polarity = -self.polarity
            for lag, kind, value in (
                (0, "spike", a),
                (2, "spike", -a),
                (3, "tail", a * self.tail_fraction),
            ):
                t = int(o) + lag
                target = sched if t < n else self._carry
                target.setdefault(t if t < n else t - n, []).append((kind, value))
        for s in range(n):
            for kind, value in sched.get(s, ()):
                if kind == "spike":
                    art[self.channels, s] += value
                else:
                    self.tail[self.channels] = value
            art[:, s] += self.tail
            self.tail *= self.decay
        mixed = np.clip(frame.samples.astype(np.int32) + np.rint(art).astype(np.int32), -32768, 32767)
        return EmgFrame(
            seq=frame.seq, timestamp_us=frame.timestamp_us, samples=mixed.astype(np.int16)
        )


class PulseScheduler:
    """Places stimulation pulses on the 2 kHz EMG sample grid while a
    command is active."""

    def __init__(self, sample_rate_hz: int = SAMPLE_RATE_HZ):
        self.sample_rate_hz = sample_rate_hz
        self._next: int | None = None
        self._period: int = 0
        self._end: int = 0

    def start(self, start_s: float, duration_s: float, pulse_freq_hz: float) -> None:
        self._next = math.ceil(start_s * self.sample_rate_hz)
        self._period = max(1, round(self.sample_rate_hz / pulse_freq_hz))
        self._end = math.floor((start_s + duration_s) * self.sample_rate_hz)

    def pulses_in(self, start_sample: int, n_samples: int) -> list[int]:
        """Pulse offsets within [start_sample, start_sample + n_samples)."""
        out: list[int] = []
        if self._next is None:
            return out
        while self._next < start_sample + n_samples and self._next <= self._end:
            if self._next >= start_sample:
                out.append(self._next - start_sample)
            self._next += self._period
        if self._next > self._end:
            self._next = None
        return out


@dataclass
class AnklePlant:
    """First-order sagittal ankle angle driven by intent and stimulation."""

    voluntary_gain_deg: dict[Movement, float]
    stim_gain_deg: dict[StimChannel, float]
    recruitment_threshold_ma: dict[StimChannel, float]
    recruitment_slope_ma: dict[StimChannel, float]
    time_constant_s: float = 0.3
    angle_limit_deg: float = ANGLE_LIMIT_DEG
    angle_deg: float = 0.0

    def __post_init__(self):
        if self.time_constant_s <= 0:
            raise ValueError("time_constant_s must be > 0")
        for ch in StimChannel:
            if self.recruitment_slope_ma[ch] <= 0:
                raise ValueError("recruitment slope must be > 0")

    def recruitment(self, current_ma: float, channel: StimChannel) -> float:
        """Normalized sigmoid recruitment: exactly 0 at zero current, rising
        through the threshold toward 1."""
        if current_ma <= 0:
            return 0.0
        thr = self.recruitment_threshold_ma[channel]
        slope = self.recruitment_slope_ma[channel]
        raw = 1.0 / (1.0 + math.exp(-(current_ma - thr) / slope))
        floor = 1.0 / (1.0 + math.exp(thr / slope))
        return (raw - floor) / (1.0 - floor)

    def recruitment_inverse(self, fraction: float, channel: StimChannel) -> float:
        """Current at which recruitment reaches the given fraction."""
        if not 0.0 < fraction < 1.0:
            raise ValueError("fraction must be in (0, 1)")
        thr = self.recruitment_threshold_ma[channel]
        slope = self.recruitment_slope_ma[channel]
        floor = 1.0 / (1.0 + math.exp(thr / slope))
        raw = floor + fraction * (1.0 - floor)
        return thr + slope * math.log(raw / (1.0 - raw))

    def target_angle(
        self,
        intent_activations: np.ndarray,
        current_ma: float,
        channel: StimChannel | None,
    ) -> float:
        voluntary = sum(
            ANGLE_SIGN[m] * self.voluntary_gain_deg.get(m, 0.0) * intent_activations[int(m)]
            for m in Movement
        )
        stim = 0.0
        if channel is not None and current_ma > 0:
            stim = (
                STIM_ANGLE_SIGN[channel]
                * self.stim_gain_deg[channel]
                * self.recruitment(current_ma, channel)
            )
        target = voluntary + stim
        return min(self.angle_limit_deg, max(-self.angle_limit_deg, target))


def plant_step(
    plant: AnklePlant,
    intent_activations: np.ndarray,
    current_ma: float,
    channel: StimChannel | None,
    dt: float,
) -> float:
    """Advance the angle one step with exact first-order relaxation."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    target = plant.target_angle(intent_activations, current_ma, channel)
    decay = math.exp(-dt / plant.time_constant_s)
    plant.angle_deg = target + (plant.angle_deg - target) * decay
    return plant.angle_deg
