"""Simulated participant: EMG synthesis, artifacts, intent models, ankle dynamics."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emgfes.cursor import ReferenceSpec, TaskMapping
from emgfes.labels import Movement, StimChannel
from emgfes.plant import (
    ARTIFACT_AMPLITUDE_ADU,
    ARTIFACT_TAIL_FRACTION,
    ARTIFACT_TAIL_TAU_S,
    AnklePlant,
    ArtifactInjector,
    BlockIntent,
    FeedbackIntent,
    MailboxIntent,
    MuscleModel,
    OrnsteinUhlenbeck,
    PlaylistEntry,
    PulseScheduler,
    ScriptedIntent,
    playlist_duration,
    playlist_lookup,
    synth_emg,
)
from emgfes.stream import N_CHANNELS, SAMPLES_PER_SEGMENT, SAMPLE_RATE_HZ

MAPPING = TaskMapping()


def simple_gain(gain: float = 3.0) -> np.ndarray:
    g = np.zeros((len(Movement), N_CHANNELS))
    for i, m in enumerate(m for m in Movement if m != Movement.REST):
        g[int(m), 8 * i : 8 * (i + 1)] = gain
    return g


def make_plant(**overrides) -> AnklePlant:
    kwargs = dict(
        voluntary_gain_deg={Movement.DORSIFLEXION: 20.0, Movement.PLANTARFLEXION: 16.0},
        stim_gain_deg={StimChannel.DORSIFLEXION: 7.0, StimChannel.PLANTARFLEXION: 7.0},
        recruitment_threshold_ma={StimChannel.DORSIFLEXION: 18.0, StimChannel.PLANTARFLEXION: 18.0},
        recruitment_slope_ma={StimChannel.DORSIFLEXION: 3.5, StimChannel.PLANTARFLEXION: 3.5},
    )
    kwargs.update(overrides)
    return AnklePlant(**kwargs)


def test_synth_emg_noise_scale():
    """Per-channel standard deviation is sigma0 + sigma1 * (gain . activation)."""
    model = MuscleModel(gain=simple_gain(3.0))
    rng = np.random.default_rng(10)
    a = np.zeros(len(Movement))
    a[Movement.DORSIFLEXION.value] = 1.0
    frames = [
        synth_emg(a, model, rng, seq=k, timestamp_us=0, n_samples=500) for k in range(40)
    ]
    samples = np.hstack([f.samples.astype(float) for f in frames])
    df_channel_std = samples[0].std()
    quiet_channel_std = samples[-1].std()
    assert df_channel_std == pytest.approx(10.0 + 10.0 * 3.0, rel=0.05)
    assert quiet_channel_std == pytest.approx(10.0, rel=0.05)


def test_synth_emg_rest_floor():
    model = MuscleModel(gain=simple_gain())
    rng = np.random.default_rng(11)
    frame = synth_emg(np.zeros(len(Movement)), model, rng, seq=0, timestamp_us=0, n_samples=4000)
    assert frame.samples.astype(float).std(axis=1) == pytest.approx(
        np.full(N_CHANNELS, 10.0), rel=0.1
    )


def test_muscle_model_validation():
    with pytest.raises(ValueError):
        MuscleModel(gain=np.zeros((2, N_CHANNELS)))
    with pytest.raises(ValueError):
        MuscleModel(gain=-simple_gain())
    with pytest.raises(ValueError):
        MuscleModel(gain=simple_gain(), crosstalk=1.0)


def test_muscle_crosstalk_blends_active_rows():
    m = MuscleModel(gain=simple_gain(4.0), crosstalk=0.5)
    eff = m.effective_gain()
    assert np.array_equal(eff[0], np.zeros(N_CHANNELS))  # rest row untouched
    active_mean = simple_gain(4.0)[1:].mean(axis=0)
    assert np.allclose(eff[1], 0.5 * simple_gain(4.0)[1] + 0.5 * active_mean)
    # gain matrix itself is not mutated
    assert np.array_equal(m.gain, simple_gain(4.0))


def test_artifact_biphasic_shape():
    """Each pulse is +A at the pulse sample, -A two samples later, with the
    recovery tail starting after the second phase."""
    inj = ArtifactInjector()
    quiet = np.zeros((N_CHANNELS, SAMPLES_PER_SEGMENT), dtype=np.int16)
    from emgfes.stream import EmgFrame

    out = inj.apply(EmgFrame(seq=0, timestamp_us=0, samples=quiet), [5])
    ch = inj.channels[0]
    a = ARTIFACT_AMPLITUDE_ADU
    assert out.samples[ch, 5] == a
    assert out.samples[ch, 6] == 0  # interphase gap
    assert out.samples[ch, 7] == -a
    tail0 = a * ARTIFACT_TAIL_FRACTION
    decay = math.exp(-1.0 / (ARTIFACT_TAIL_TAU_S * SAMPLE_RATE_HZ))
    assert out.samples[ch, 8] == round(tail0)
    assert out.samples[ch, 9] == round(tail0 * decay)
    # channels outside the artifact set see nothing
    untouched = [c for c in range(N_CHANNELS) if c not in set(inj.channels.tolist())]
    assert not out.samples[untouched].any()


def test_artifact_polarity_alternates():
    inj = ArtifactInjector()
    from emgfes.stream import EmgFrame

    quiet = np.zeros((N_CHANNELS, SAMPLES_PER_SEGMENT), dtype=np.int16)
    out = inj.apply(EmgFrame(seq=0, timestamp_us=0, samples=quiet), [2, 10])
    ch = inj.channels[0]
    assert out.samples[ch, 2] > 0 and out.samples[ch, 10] < 0


def test_artifact_carry_across_segments():
    """Pulse actions past the segment end land on the next segment."""
    inj = ArtifactInjector()
    from emgfes.stream import EmgFrame

    quiet = np.zeros((N_CHANNELS, SAMPLES_PER_SEGMENT), dtype=np.int16)
    first = inj.apply(EmgFrame(seq=0, timestamp_us=0, samples=quiet), [17])
    second = inj.apply(EmgFrame(seq=1, timestamp_us=9000, samples=quiet), [])
    ch = inj.channels[0]
    a = ARTIFACT_AMPLITUDE_ADU
    assert first.samples[ch, 17] == a
    assert second.samples[ch, 1] == -a  # second phase, two samples later
    tail0 = a * ARTIFACT_TAIL_FRACTION
    assert second.samples[ch, 2] == round(tail0)


def test_artifact_tail_stays_under_blank_threshold():
    assert ARTIFACT_AMPLITUDE_ADU * ARTIFACT_TAIL_FRACTION < 200.0


def test_artifact_does_not_mutate_input():
    inj = ArtifactInjector()
    from emgfes.stream import EmgFrame

    samples = np.zeros((N_CHANNELS, SAMPLES_PER_SEGMENT), dtype=np.int16)
    frame = EmgFrame(seq=0, timestamp_us=0, samples=samples)
    inj.apply(frame, [3])
    assert not frame.samples.any()


def test_artifact_needs_channel_majority():
    with pytest.raises(ValueError):
        ArtifactInjector(channels=np.arange(10))


def test_pulse_scheduler_spacing():
    """25 Hz on the 2 kHz grid: one pulse every 80 samples."""
    sched = PulseScheduler()
    sched.start(0.0, 1.0, 25.0)
    offsets = []
    for k in range(120):
        offsets.extend(k * SAMPLES_PER_SEGMENT + o for o in sched.pulses_in(k * SAMPLES_PER_SEGMENT, SAMPLES_PER_SEGMENT))
    assert offsets == list(range(0, 2001, 80))
    assert sched.pulses_in(120 * SAMPLES_PER_SEGMENT, SAMPLES_PER_SEGMENT) == []


def test_pulse_scheduler_alignment():
    """Start time rounds up to the next sample; the train ends at start + duration."""
    sched = PulseScheduler()
    sched.start(0.01001, 0.1, 100.0)  # first sample at ceil(20.02) = 21
    out = sched.pulses_in(0, 400)
    first = out[0]
    assert first == 21
    assert all(b - a == 20 for a, b in zip(out, out[1:]))
    assert 21 + (len(out) - 1) * 20 <= math.floor((0.01001 + 0.1) * 2000)


def test_pulse_scheduler_idle_before_start():
    sched = PulseScheduler()
    assert sched.pulses_in(0, 100) == []
    sched.start(1.0, 0.1, 50.0)
    assert sched.pulses_in(0, 100) == []


def test_playlist_lookup_boundaries():
    spec_a = ReferenceSpec(movement=Movement.DORSIFLEXION, rate_hz=0.5, hold_s=0.5, rest_s=0.5)
    spec_b = ReferenceSpec(movement=Movement.PLANTARFLEXION, rate_hz=0.5, hold_s=0.5, rest_s=0.5)
    entries = (PlaylistEntry(spec=spec_a, cycles=2), PlaylistEntry(spec=spec_b, cycles=1))
    assert playlist_duration(entries) == pytest.approx(6.0)
    spec, t_local = playlist_lookup(entries, 0.0)
    assert spec is spec_a and t_local == 0.0
    spec, t_local = playlist_lookup(entries, 3.1)  # second cycle of A
    assert spec is spec_a and t_local == pytest.approx(1.1)
    spec, t_local = playlist_lookup(entries, 4.5)
    assert spec is spec_b and t_local == pytest.approx(0.5)
    assert playlist_lookup(entries, 6.0) is None


def test_playlist_entry_validation():
    spec = ReferenceSpec(movement=Movement.DORSIFLEXION)
    with pytest.raises(ValueError):
        PlaylistEntry(spec=spec, cycles=0)


def test_scripted_intent_follows_magnitude():
    spec = ReferenceSpec(movement=Movement.DORSIFLEXION, rate_hz=0.1, hold_s=2.5, rest_s=2.5)
    intent = ScriptedIntent((PlaylistEntry(spec=spec, cycles=1),))
    a = intent.activations(1.25)  # halfway up the 2.5 s rise
    assert a[Movement.DORSIFLEXION.value] == pytest.approx(0.5)
    assert a.sum() == a[Movement.DORSIFLEXION.value]
    assert not intent.activations(11.0).any()  # past the playlist


def test_scripted_intent_dither_needs_rng():
    spec = ReferenceSpec(movement=Movement.DORSIFLEXION)
    with pytest.raises(ValueError):
        ScriptedIntent((PlaylistEntry(spec=spec),), dither_std=0.1)


def test_block_intent_levels():
    from emgfes.calibration import Block

    intent = BlockIntent(
        [Block(Movement.REST, 0.0, 2.0), Block(Movement.DORSIFLEXION, 0.8, 3.0)]
    )
    assert not intent.activations(1.0).any()
    assert intent.activations(2.0)[Movement.DORSIFLEXION.value] == 0.8
    assert intent.block_at(10.0) is None
    assert not intent.activations(10.0).any()


def test_feedback_intent_integrates_toward_reference():
    spec = ReferenceSpec(movement=Movement.DORSIFLEXION, rate_hz=0.1, hold_s=2.5, rest_s=2.5)
    intent = FeedbackIntent((PlaylistEntry(spec=spec, cycles=1),), MAPPING, servo_gain=6.0)
    t = 0.0
    for _ in range(400):  # cursor pinned at origin: error stays positive
        intent.activations(t)
        t += 0.009
    assert intent.effort > 0.5


def test_feedback_intent_freezes():
    spec = ReferenceSpec(movement=Movement.DORSIFLEXION, rate_hz=0.1, hold_s=2.5, rest_s=2.5)
    intent = FeedbackIntent((PlaylistEntry(spec=spec, cycles=1),), MAPPING, servo_gain=0.5)
    intent.activations(3.0)
    intent.activations(3.5)
    assert intent.effort > 0
    intent.observe(0.0, 0.0, frozen=True)
    before = intent.effort
    intent.activations(4.0)
    assert intent.effort == before
    intent.observe(0.0, 0.0, frozen=False)
    intent.activations(4.5)
    assert intent.effort > before


def test_feedback_intent_leaks_at_rest():
    spec = ReferenceSpec(movement=Movement.DORSIFLEXION, rate_hz=0.1, hold_s=2.5, rest_s=2.5)
    intent = FeedbackIntent((PlaylistEntry(spec=spec, cycles=1),), MAPPING, servo_gain=6.0)
    intent.activations(3.0)
    intent.activations(4.0)
    peak = intent.effort
    assert peak > 0
    intent.activations(9.5)  # rest phase of the cycle
    intent.activations(9.9)
    assert intent.effort < peak


def test_feedback_intent_validation():
    spec = ReferenceSpec(movement=Movement.DORSIFLEXION)
    with pytest.raises(ValueError):
        FeedbackIntent((PlaylistEntry(spec=spec),), MAPPING, servo_gain=0.0)


def test_mailbox_intent_clamps():
    intent = MailboxIntent()
    assert not intent.activations(0.0).any()
    intent.set(Movement.PLANTARFLEXION, 1.7)
    assert intent.activations(0.0)[Movement.PLANTARFLEXION.value] == 1.0
    intent.set(Movement.PLANTARFLEXION, -0.5)
    assert not intent.activations(1.0).any()


def test_ou_stationary_statistics():
    rng = np.random.default_rng(5)
    ou = OrnsteinUhlenbeck(std=0.2, tau_s=0.4, rng=rng)
    values = np.array([ou.sample(0.009 * k) for k in range(40_000)])
    assert values[2000:].std() == pytest.approx(0.2, rel=0.05)
    assert abs(values[2000:].mean()) < 0.02


def test_ou_zero_std_is_silent():
    ou = OrnsteinUhlenbeck(std=0.0, tau_s=0.4, rng=np.random.default_rng(0))
    assert ou.sample(0.0) == 0.0 and ou.sample(1.0) == 0.0


def test_ou_rejects_time_reversal():
    ou = OrnsteinUhlenbeck(std=0.1, tau_s=0.4, rng=np.random.default_rng(0))
    ou.sample(1.0)
    ou.sample(2.0)
    with pytest.raises(ValueError):
        ou.sample(1.5)


def test_recruitment_curve():
    plant = make_plant()
    assert plant.recruitment(0.0, StimChannel.DORSIFLEXION) == 0.0
    assert plant.recruitment(-5.0, StimChannel.DORSIFLEXION) == 0.0
    currents = np.linspace(0.5, 60.0, 100)
    vals = [plant.recruitment(c, StimChannel.DORSIFLEXION) for c in currents]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1.0
    assert plant.recruitment(18.0, StimChannel.DORSIFLEXION) == pytest.approx(0.5, abs=0.01)


@given(fraction=st.floats(0.05, 0.95))
@settings(max_examples=60, deadline=None)
def test_recruitment_inverse_round_trip(fraction):
    plant = make_plant()
    current = plant.recruitment_inverse(fraction, StimChannel.PLANTARFLEXION)
    assert plant.recruitment(current, StimChannel.PLANTARFLEXION) == pytest.approx(fraction, abs=1e-9)


def test_recruitment_inverse_domain():
    plant = make_plant()
    with pytest.raises(ValueError):
        plant.recruitment_inverse(0.0, StimChannel.DORSIFLEXION)
    with pytest.raises(ValueError):
        plant.recruitment_inverse(1.0, StimChannel.DORSIFLEXION)


def test_plant_exact_relaxation():
    """Constant drive: angle follows target + (a0 - target) * exp(-t / tau)."""
    from emgfes.plant import plant_step

    plant = make_plant(time_constant_s=0.3, angle_deg=2.0)
    a = np.zeros(len(Movement))
    a[Movement.DORSIFLEXION.value] = 0.5
    target = 20.0 * 0.5
    dt = 1.0 / 120.0
    for n in range(1, 121):
        angle = plant_step(plant, a, 0.0, None, dt)
        expect = target + (2.0 - target) * math.exp(-n * dt / 0.3)
        assert angle == pytest.approx(expect, abs=1e-9)


def test_plant_step_rejects_bad_dt():
    from emgfes.plant import plant_step

    with pytest.raises(ValueError):
        plant_step(make_plant(), np.zeros(len(Movement)), 0.0, None, 0.0)


def test_plant_signs_and_limit():
    plant = make_plant(angle_limit_deg=10.0)
    a = np.zeros(len(Movement))
    a[Movement.PLANTARFLEXION.value] = 1.0
    assert plant.target_angle(a, 0.0, None) == -10.0  # clamped from -16
    a[:] = 0.0
    a[Movement.INVERSION.value] = 1.0
    assert plant.target_angle(a, 0.0, None) == 0.0  # off-axis movement
    assert plant.target_angle(np.zeros(len(Movement)), 50.0, StimChannel.PLANTARFLEXION) < 0


def test_plant_validation():
    with pytest.raises(ValueError):
        make_plant(time_constant_s=0.0)
    with pytest.raises(ValueError):
        make_plant(recruitment_slope_ma={StimChannel.DORSIFLEXION: 0.0, StimChannel.PLANTARFLEXION: 3.5})
