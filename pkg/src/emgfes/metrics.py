"""Evaluation metrics for closed-loop sessions.

Pure, stateless computations over recorded series: trajectory error,
online labeling accuracy, RMS-distribution divergence, range of motion
with baseline-shift removal, target-zone accuracy, stimulation level
binning, and correlation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .cursor import TaskMapping, label_reference
from .labels import Movement

JSD_DEFAULT_BINS = 50
STIM_LEVEL_BINS = 10
STABLE_LEVEL_MIN_COUNT = 3

# Upper-range reference angles used to normalize range of motion, degrees.
TROM_REFERENCE_DEG = {
    Movement.DORSIFLEXION: 20.0,
    Movement.PLANTARFLEXION: 16.0,
}


class ZeroRange(Exception):
    pass


class ZeroVariance(Exception):
    pass


class BinMismatch(Exception):
    pass


class WindowOutOfRange(Exception):
    pass


@dataclass(frozen=True)
class TrajectoryPair:
    """Reference and predicted cursor series on a common timebase."""

    reference: np.ndarray  # (n, 2) float, values in [-1, 1]
    predicted: np.ndarray  # (n, 2)
    task_axis: int = 1

    def __post_init__(self):
        ref = np.asarray(self.reference, dtype=float)
        pred = np.asarray(self.predicted, dtype=float)
        if ref.shape != pred.shape or ref.ndim != 2 or ref.shape[1] != 2:
            raise ValueError("reference and predicted must both be (n, 2)")
        if ref.shape[0] == 0:
            raise ValueError("empty trajectory")
        if self.task_axis not in (0, 1):
            raise ValueError("task_axis must be 0 or 1")
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "predicted", pred)


def nmae(pair: TrajectoryPair) -> float:
    """Mean absolute error on the task axis divided by the reference range."""
    ref = pair.reference[:, pair.task_axis]
    pred = pair.predicted[:, pair.task_axis]
    lo, hi = float(ref.min()), float(ref.max())
    if hi - lo == 0.0:
        raise ZeroRange("reference is constant on the task axis")
    return float(np.mean(np.abs(pred - ref))) / (hi - lo)


@dataclass(frozen=True)
class AccuracyReport:
    overall: float
    per_class: dict[Movement, float]  # keyed by reference label; NaN if absent


def online_accuracy(pair: TrajectoryPair, mapping: TaskMapping) -> AccuracyReport:
    """Label both series through the three-region axis rule and compare."""
    ref_labels = np.array(
        [label_reference(x, y, mapping) for x, y in pair.reference], dtype=int
    )
    pred_labels = np.array(
        [label_reference(x, y, mapping) for x, y in pair.predicted], dtype=int
    )
    match = ref_labels == pred_labels
    per_class: dict[Movement, float] = {}
    for movement in Movement:
        sel = ref_labels == int(movement)
        per_class[movement] = float(match[sel].mean()) if sel.any() else float("nan")
    return AccuracyReport(overall=float(match.mean()), per_class=per_class)


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray  # (bins + 1,), uniform
    counts: np.ndarray  # (bins,), nonnegative

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        counts = np.asarray(self.counts, dtype=float)
        if edges.ndim != 1 or counts.ndim != 1 or edges.size != counts.size + 1:
            raise ValueError("edges must have one more entry than counts")
        if (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def probabilities(self) -> np.ndarray:
        total = self.counts.sum()
        if total == 0:
            raise ValueError("empty histogram has no probabilities")
        return self.counts / total


def shared_edges(a: np.ndarray, b: np.ndarray, bins: int = JSD_DEFAULT_BINS) -> np.ndarray:
    """Uniform bin edges spanning the pooled min-max of both samples."""
    pooled = np.concatenate([np.ravel(a), np.ravel(b)])
    if pooled.size == 0:
        raise ValueError("cannot derive edges from empty samples")
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi == lo:
        hi = lo + 1.0  # degenerate pooled sample: one occupied bin either way
    return np.linspace(lo, hi, bins + 1)


def histogram(samples: np.ndarray, edges: np.ndarray) -> Histogram:
    counts, _ = np.histogram(np.ravel(samples), bins=np.asarray(edges, dtype=float))
    return Histogram(edges=np.asarray(edges, dtype=float), counts=counts.astype(float))


def jsd(p: Histogram, q: Histogram) -> float:
    """Jensen-Shannon divergence, base 2, between two aligned histograms."""
    if p.edges.size != q.edges.size or not np.allclose(p.edges, q.edges):
        raise BinMismatch("histograms use different bin edges")
    pp = p.probabilities
    qq = q.probabilities
    m = 0.5 * (pp + qq)

    def kl(a: np.ndarray, b: np.ndarray) -> float:
        sel = a > 0
        return float(np.sum(a[sel] * np.log2(a[sel] / b[sel])))

    value = 0.5 * kl(pp, m) + 0.5 * kl(qq, m)
    return float(min(1.0, max(0.0, value)))


def lowpass_trace(values: np.ndarray, fs: float, cutoff_hz: float = 2.0) -> np.ndarray:
    """Zero-phase 2nd-order Butterworth lowpass used to smooth angle traces."""
    x = np.asarray(values, dtype=float)
    sos = signal.butter(2, cutoff_hz, btype="low", fs=fs, output="sos")
    # The default reflect padding is a few samples, far shorter than the
    # filter's settling time at these cutoffs; pad ~3 cutoff periods so the
    # edges are as clean as the interior.
    padlen = min(x.size - 1, int(3 * fs / cutoff_hz))
    return signal.sosfiltfilt(sos, x, padlen=padlen)


@dataclass(frozen=True)
class RampWindow:
    """Index span of one ramp plus the hold sub-span scored for RoM."""

    movement: Movement
    start: int
    end: int  # exclusive
    hold_start: int
    hold_end: int  # exclusive

    def __post_init__(self):
        if not (self.start <= self.hold_start < self.hold_end <= self.end):
            raise ValueError("hold window must lie inside the ramp window")


@dataclass(frozen=True)
class RomReport:
    rom_deg: tuple[float, ...]  # per ramp
    trom_pct: tuple[float, ...]  # per ramp, NaN when no reference angle exists
    movements: tuple[Movement, ...]


def rom(
    angles: np.ndarray,
    windows: list[RampWindow],
    trom_reference_deg: dict[Movement, float] | None = None,
) -> RomReport:
    """Per-ramp range of motion with baseline-shift removal.

    Within each ramp the line interpolating the start and end angles is
    subtracted, then RoM is the largest excursion magnitude inside the hold
    window. Normalization divides by the movement-matched reference angle.
    """
    angles = np.asarray(angles, dtype=float)
    refs = TROM_REFERENCE_DEG if trom_reference_deg is None else trom_reference_deg
    roms: list[float] = []
    troms: list[float] = []
    for w in windows:
        if not (0 <= w.start and w.end <= angles.size):
            raise WindowOutOfRange(f"ramp window [{w.start}, {w.end}) outside trace")
        n = w.end - w.start
        baseline = np.linspace(angles[w.start], angles[w.end - 1], n)
        detrended = angles[w.start:w.end] - baseline
        hold = detrended[w.hold_start - w.start : w.hold_end - w.start]
        value = float(np.max(np.abs(hold)))
        roms.append(value)
        ref = refs.get(w.movement)
        troms.append(100.0 * value / ref if ref else float("nan"))
    return RomReport(
        rom_deg=tuple(roms),
        trom_pct=tuple(troms),
        movements=tuple(w.movement for w in windows),
    )


def target_zone_accuracy(values: np.ndarray, lo: float, hi: float) -> float:
    """Fraction of samples inside [lo, hi]."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty series")
    return float(np.mean((values >= lo) & (values <= hi)))


def level_zone(level: float, half_width: float = 0.2) -> tuple[float, float]:
    """Scoring zone around a target level: level +/- 0.2 in axis units."""
    return level - half_width, level + half_width


@dataclass(frozen=True)
class StimLevelReport:
    counts: np.ndarray  # (10,) commands per 10%-of-max bin
    stable: tuple[int, ...]  # bins observed at least STABLE_LEVEL_MIN_COUNT times

    @property
    def n_stable(self) -> int:
        return len(self.stable)


def stim_level_bins(
    currents_ma: np.ndarray,
    max_ma: float,
    min_count: int = STABLE_LEVEL_MIN_COUNT,
) -> StimLevelReport:
    """Bin emitted currents in 10% increments of the channel maximum."""
    currents = np.asarray(currents_ma, dtype=float)
    if max_ma <= 0:
        raise ValueError("max_ma must be > 0")
    bins = np.floor(100.0 * currents / max_ma / 10.0).astype(int)
    bins = np.clip(bins, 0, STIM_LEVEL_BINS - 1)
    counts = np.bincount(bins, minlength=STIM_LEVEL_BINS).astype(int) if bins.size else np.zeros(
        STIM_LEVEL_BINS, dtype=int
    )
    stable = tuple(int(i) for i in np.flatnonzero(counts >= min_count))
    return StimLevelReport(counts=counts, stable=stable)


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("x and y must be equal-length 1-d series of length >= 2")
    if np.var(x) == 0.0 or np.var(y) == 0.0:
        raise ZeroVariance("correlation undefined for constant series")
    xc = x - x.mean()
    yc = y - y.mean()
    return float(np.dot(xc, yc) / math.sqrt(np.dot(xc, xc) * np.dot(yc, yc)))
