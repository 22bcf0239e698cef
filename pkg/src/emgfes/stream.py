"""Streaming multi-channel EMG pipeline: segment ingestion, IIR filtering,
stimulation-artifact blanking, moving-average baseline removal and windowed
RMS feature extraction.

The acquisition chain delivers 32-channel segments of 18 samples (9 ms at
2 kHz, ~111 segments/s). Segments are concatenated into a sliding window;
per segment one feature vector of per-channel RMS values is produced once
the window is full.

Per-tick processing order (see ``FeaturePipeline.process``):

1. ``push_segment``    band-pass + notch filter the new samples, append
2. ``blank_artifacts`` mask samples around stimulation artifacts
3. ``apply_baseline``  subtract the per-channel EMA baseline (skips updating
                       the average on masked samples so it does not chase
                       the artifact tail)
4. ``rms_features``    RMS over the unmasked window samples
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

try:
    # Compiled kernel behind scipy.signal.sosfilt; the public wrapper spends
    # ~60 us per call on argument validation, which dominates at 18-sample
    # blocks. Output is bit-identical to the public path (same kernel).
    from scipy.signal._sosfilt import _sosfilt
except ImportError:  # pragma: no cover - future scipy layouts
    _sosfilt = None

N_CHANNELS = 32
SAMPLES_PER_SEGMENT = 18
SAMPLE_RATE_HZ = 2000
# Nominally 111 Hz: 18-sample segments at 2 kHz, one every 9 ms exactly.
SEGMENT_RATE_HZ = SAMPLE_RATE_HZ / SAMPLES_PER_SEGMENT
SEGMENT_PERIOD_US = 9000

# Blanking margins: 7.5 ms before and 15 ms after a detected artifact.
BLANK_PRE_SAMPLES = 15
BLANK_POST_SAMPLES = 30

DEFAULT_BLANK_THRESHOLD_ADU = 200
DEFAULT_WINDOW_LEN = 504   # ~252 ms
REDUCED_WINDOW_LEN = 240   # ~120 ms

WINDOW_LEN_BY_MS = {252: DEFAULT_WINDOW_LEN, 120: REDUCED_WINDOW_LEN}


class GapDetected(Exception):
    """A segment sequence number was skipped."""

    def __init__(self, missing_seq: int):
        self.missing_seq = missing_seq
        super().__init__(f"missing EMG segment seq={missing_seq}")


class AllBlanked(Exception):
    """Every sample in the window is masked; RMS is undefined."""


@dataclass
class EmgFrame:
    """One raw acquisition segment: 32 channels x 18 samples in ADU."""

    seq: int
    timestamp_us: int
    samples: np.ndarray  # (N_CHANNELS, SAMPLES_PER_SEGMENT) int16

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.int16)
        if self.samples.shape != (N_CHANNELS, SAMPLES_PER_SEGMENT):
            raise ValueError(
                f"expected {(N_CHANNELS, SAMPLES_PER_SEGMENT)} samples, got {self.samples.shape}"
            )


@dataclass
class FeatureVector:
    """Per-channel RMS summary of one window position."""

    rms: np.ndarray  # (N_CHANNELS,) float64, ADU
    timestamp_us: int
    blank_fraction: float  # fraction of window samples masked (mask is shared across channels)
    all_blanked: bool = False


class FilterState:
    """Per-channel streaming IIR state: band-pass, notch and EMA baseline.

    4th-order Butterworth band-pass and a Q=30 biquad notch, run causally
    through ``sosfilt`` with persistent per-channel delay state. Either stage
    can be disabled by passing ``None`` for its frequency. The EMA baseline
    (``ema``, update rate ``alpha``) is consumed by ``apply_baseline``.
    """

    def __init__(
        self,
        sample_rate_hz: float = SAMPLE_RATE_HZ,
        n_channels: int = N_CHANNELS,
        bandpass_hz: tuple[float, float] | None = (10.0, 500.0),
        bandpass_order: int = 4,
        notch_hz: float | None = 50.0,
        notch_q: float = 30.0,
        ema_alpha: float = 0.1,
    ):
        if not 0.0 < ema_alpha <= 1.0:
            raise ValueError(f"ema_alpha must be in (0, 1], got {ema_alpha}")
        self.sample_rate_hz = sample_rate_hz
        self.n_channels = n_channels
        self.ema_alpha = ema_alpha
        self.ema = np.zeros(n_channels)

        sections = []
        if bandpass_hz is not None:
            lo, hi = bandpass_hz
            sections.append(
                signal.butter(bandpass_order, [lo, hi], btype="bandpass", fs=sample_rate_hz, output="sos")
            )
        if notch_hz is not None:
            b, a = signal.iirnotch(notch_hz, notch_q, fs=sample_rate_hz)
            sections.append(signal.tf2sos(b, a))
        if sections:
            self.sos = np.ascontiguousarray(np.vstack(sections), dtype=np.float64)
            self.zi = np.zeros((self.sos.shape[0], n_channels, 2))
        else:
            self.sos = None
            self.zi = None

    def filter_block(self, block: np.ndarray) -> np.ndarray:
        """Filter a (channels, samples) block, advancing the state by its length."""
        if self.sos is None:
            return np.array(block, dtype=np.float64)
        if _sosfilt is not None:
            x = np.array(block, dtype=np.float64)  # kernel filters in place
            zi = np.ascontiguousarray(self.zi.transpose(1, 0, 2))
            _sosfilt(self.sos, x, zi)
            self.zi = zi.transpose(1, 0, 2)
            return x
        out, self.zi = signal.sosfilt(self.sos, np.asarray(block, dtype=np.float64), axis=-1, zi=self.zi)
        return out


@dataclass
class FeatureWindow:
    """Sliding sample window over the most recent ``window_len`` samples.

    ``samples`` holds filtered values; the newest ``fresh`` columns have not
    been baseline-corrected yet. ``mask`` flags blanked sample indices
    (shared across channels: blanking triggers on a channel majority and
    masks the whole sample).
    """

    window_len: int = DEFAULT_WINDOW_LEN
    n_channels: int = N_CHANNELS
    samples: np.ndarray = field(init=False)
    mask: np.ndarray = field(init=False)
    mask_carry: np.ndarray = field(init=False)
    filled: int = field(init=False, default=0)
    fresh: int = field(init=False, default=0)
    last_seq: int | None = field(init=False, default=None)
    latest_timestamp_us: int = field(init=False, default=0)

    def __post_init__(self):
        if self.window_len < SAMPLES_PER_SEGMENT:
            raise ValueError("window_len must hold at least one segment")
        self.samples = np.zeros((self.n_channels, self.window_len))
        self.mask = np.zeros(self.window_len, dtype=bool)
        # Blanking spans detected near the window's trailing edge extend past
        # it; the overhang is parked here and applied as those samples arrive.
        self.mask_carry = np.zeros(BLANK_POST_SAMPLES, dtype=bool)

    @property
    def ready(self) -> bool:
        return self.filled >= self.window_len


def push_segment(window: FeatureWindow, frame: EmgFrame, filt: FilterState | None) -> FeatureWindow:
    """Filter one segment and append it, evicting the oldest samples.

    Raises ``GapDetected`` if ``frame.seq`` skips ahead; the caller decides
    whether to zero-fill or abort.
    """
    if window.last_seq is not None and frame.seq != window.last_seq + 1:
        raise GapDetected(window.last_seq + 1)

    if filt is not None:
        block = filt.filter_block(frame.samples)
    else:
        block = frame.samples.astype(np.float64)

    n = SAMPLES_PER_SEGMENT
    tail = window.window_len - n
    window.samples[:, :tail] = window.samples[:, n:]
    window.samples[:, tail:] = block
    window.mask[:tail] = window.mask[n:]
    window.mask[tail:] = False
    take = min(n, window.mask_carry.size)
    window.mask[tail:tail + take] = window.mask_carry[:take]
    keep = window.mask_carry.size - take
    window.mask_carry[:keep] = window.mask_carry[take:]
    window.mask_carry[keep:] = False
    window.filled = min(window.filled + n, window.window_len)
    window.fresh = n
    window.last_seq = frame.seq
    window.latest_timestamp_us = frame.timestamp_us
    return window


def blank_artifacts(
    window: FeatureWindow, threshold_adu: float = DEFAULT_BLANK_THRESHOLD_ADU
) -> FeatureWindow:
    """Mask samples around stimulation artifacts.

    Each sample is tested once, on arrival, against its filtered value
    before baseline correction: an artifact is a sample whose magnitude
    exceeds the threshold on at least half of the channels. The mask covers
    15 samples before and 30 after (7.5/15 ms at 2 kHz); the part of that
    span beyond the newest sample is carried over and lands on the next
    segments as they arrive. Must run between ``push_segment`` and
    ``apply_baseline`` for the tick.
    """
    min_channels = (window.n_channels + 1) // 2
    start = window.window_len - SAMPLES_PER_SEGMENT
    over = np.abs(window.samples[:, start:]) > threshold_adu
    hits = np.flatnonzero(over.sum(axis=0) >= min_channels)
    for h in hits:
        i = start + int(h)
        lo = max(i - BLANK_PRE_SAMPLES, 0)
        hi = i + BLANK_POST_SAMPLES + 1
        window.mask[lo:min(hi, window.window_len)] = True
        if hi > window.window_len:
            window.mask_carry[:hi - window.window_len] = True
    return window


def apply_baseline(window: FeatureWindow, filt: FilterState) -> FeatureWindow:
    """Subtract the per-channel EMA baseline from the freshly pushed samples.

    Each sample has the EMA value preceding it subtracted; the EMA then
    advances on that sample only if it is unmasked, which keeps the baseline
    estimate from absorbing the slow discharge tail that follows a
    stimulation pulse. Must run after ``blank_artifacts`` for the tick.

    The recurrence (e' = e + alpha * (x - e) on unmasked samples, e' = e on
    masked ones) is evaluated in closed form: with q_i the per-sample retain
    factor (1 - alpha, or 1 when masked), the EMA before sample i is
    e_i = e_0 * prod(q_j, j<i) + sum(alpha * x_j * prod(q_l, j<l<i), j<i
    unmasked).
    """
    if window.fresh == 0:
        return window
    start = window.window_len - window.fresh
    x = window.samples[:, start:]
    keep = ~window.mask[start:]
    a = filt.ema_alpha
    if a >= 1.0:
        # Closed form divides by the running product of retain factors,
        # which is zero here; the plain recurrence is cheap enough.
        for col in range(window.fresh):
            y = x[:, col] - filt.ema
            if keep[col]:
                filt.ema += a * (x[:, col] - filt.ema)
            x[:, col] = y
        window.fresh = 0
        return window
    n = window.fresh
    q = np.where(keep, 1.0 - a, 1.0)
    prefix = np.empty(n + 1)
    prefix[0] = 1.0
    np.cumprod(q, out=prefix[1:])
    w = (a * keep) / prefix[1:]
    s = np.cumsum(x * w, axis=1)
    ema_before = np.empty((window.n_channels, n))
    ema_before[:, 0] = filt.ema
    ema_before[:, 1:] = (filt.ema[:, None] + s[:, :-1]) * prefix[1:n]
    filt.ema = (filt.ema + s[:, -1]) * prefix[n]
    x -= ema_before
    window.fresh = 0
    return window


def rms_features(window: FeatureWindow, fallback: np.ndarray | None = None) -> FeatureVector:
    """Per-channel RMS over the unmasked window samples.

    When every sample is masked the result is undefined: raises
    ``AllBlanked`` unless a ``fallback`` vector (typically the previous
    feature) is supplied, in which case it is returned flagged.
    """
    if not window.ready:
        raise ValueError("window not full")
    masked = window.mask.any()
    n = window.window_len - int(window.mask.sum()) if masked else window.window_len
    blank_fraction = 1.0 - n / window.window_len
    if n == 0:
        if fallback is None:
            raise AllBlanked("all window samples are masked")
        return FeatureVector(
            rms=np.array(fallback, dtype=np.float64, copy=True),
            timestamp_us=window.latest_timestamp_us,
            blank_fraction=1.0,
            all_blanked=True,
        )
    if masked:
        sq = np.einsum("ij,ij,j->i", window.samples, window.samples, ~window.mask)
    else:
        sq = np.einsum("ij,ij->i", window.samples, window.samples)
    rms = np.sqrt(sq / n)
    return FeatureVector(rms=rms, timestamp_us=window.latest_timestamp_us, blank_fraction=blank_fraction)


class FeaturePipeline:
    """Single-producer streaming pipeline: EmgFrame in, FeatureVector out.

    Emits one feature vector per pushed segment once the window is full
    (feature rate equals the segment rate). Holds the last emitted RMS as
    the fallback for fully blanked windows.
    """

    def __init__(
        self,
        window_len: int = DEFAULT_WINDOW_LEN,
        filters: FilterState | None = None,
        blank_threshold_adu: float = DEFAULT_BLANK_THRESHOLD_ADU,
        blanking_enabled: bool = True,
    ):
        self.window = FeatureWindow(window_len=window_len)
        self.filters = filters if filters is not None else FilterState()
        self.blank_threshold_adu = blank_threshold_adu
        self.blanking_enabled = blanking_enabled
        self.last_rms: np.ndarray | None = None

    def process(self, frame: EmgFrame) -> FeatureVector | None:
        push_segment(self.window, frame, self.filters)
        if self.blanking_enabled:
            blank_artifacts(self.window, self.blank_threshold_adu)
        apply_baseline(self.window, self.filters)
        if not self.window.ready:
            return None
        feat = rms_features(self.window, fallback=self.last_rms)
        self.last_rms = feat.rms
        return feat
