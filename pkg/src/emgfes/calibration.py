"""Calibration data set, recording protocols, and the offline split.

A calibration recording is a labeled stream of RMS feature vectors
segmented per movement block. Offline evaluation splits every segment
into train (first and last 40%) and test (middle 20%).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labels import MOVEMENTS, Movement
from .stream import N_CHANNELS

LDA_DEFAULT_SHRINKAGE = 0.1
DEFAULT_REST_S = 10.0
DEFAULT_MVC_S = 10.0
MIN_SEGMENT_SAMPLES = 5


class SegmentTooShort(Exception):
    pass


class InsufficientData(Exception):
    pass


class DimensionMismatch(Exception):
    pass


@dataclass(frozen=True)
class Prediction:
    """Decoder output for one feature vector."""

    label: Movement
    scores: np.ndarray  # per-class posterior over model.classes, sums to 1
    latency_us: float = 0.0

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        object.__setattr__(self, "scores", scores)


@dataclass(frozen=True)
class Block:
    """One scripted protocol block: hold a movement at a level."""

    movement: Movement
    level: float
    duration_s: float


def default_protocol(
    movements: tuple[Movement, ...] = MOVEMENTS,
    rest_s: float = DEFAULT_REST_S,
    mvc_s: float = DEFAULT_MVC_S,
) -> tuple[Block, ...]:
    """Rest once, then one maximal contraction per movement."""
    blocks = [Block(Movement.REST, 0.0, rest_s)]
    for m in movements:
        if m == Movement.REST:
            continue
        blocks.append(Block(m, 1.0, mvc_s))
    return tuple(blocks)


def alternating_protocol(
    movements: tuple[Movement, ...] = MOVEMENTS,
    contraction_s: float = 3.0,
    rest_s: float = 3.0,
    repeats: int = 2,
) -> tuple[Block, ...]:
    """Shorter alternating contraction-rest variant (fatigue-sparing)."""
    blocks: list[Block] = [Block(Movement.REST, 0.0, rest_s)]
    for m in movements:
        if m == Movement.REST:
            continue
        for _ in range(repeats):
            blocks.append(Block(m, 1.0, contraction_s))
            blocks.append(Block(Movement.REST, 0.0, rest_s))
    return tuple(blocks)


@dataclass(frozen=True)
class Segment:
    """Contiguous run of samples recorded for one movement block."""

    movement: Movement
    start: int
    end: int  # exclusive

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError("segment must be nonempty with start >= 0")


@dataclass(frozen=True)
class CalibrationSet:
    features: np.ndarray  # (n, 32)
    labels: np.ndarray  # (n,) int class labels
    classes: tuple[Movement, ...]
    segments: tuple[Segment, ...]

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if feats.ndim != 2 or feats.shape[1] != N_CHANNELS:
            raise DimensionMismatch(f"features must be (n, {N_CHANNELS})")
        if labels.shape != (feats.shape[0],):
            raise ValueError("labels must align with features")
        declared = {int(c) for c in self.classes}
        present = set(np.unique(labels).tolist())
        if not present <= declared:
            raise ValueError("labels outside the declared class set")
        for c in declared:
            if c not in present:
                raise InsufficientData(f"class {Movement(c).name} has no samples")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]


def split_offline(cal: CalibrationSet) -> tuple[CalibrationSet, CalibrationSet]:
    """Per segment: first and last 40% train, middle 20% test."""
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for seg in cal.segments:
        n = seg.end - seg.start
        if n < MIN_SEGMENT_SAMPLES:
            raise SegmentTooShort(
                f"{seg.movement.name} segment has {n} samples, needs {MIN_SEGMENT_SAMPLES}"
            )
        lo = seg.start + int(0.4 * n)
        hi = seg.start + int(0.6 * n)
        idx = np.arange(seg.start, seg.end)
        test_idx.append(idx[(idx >= lo) & (idx < hi)])
        train_idx.append(idx[(idx < lo) | (idx >= hi)])

    def subset(indices: list[np.ndarray]) -> CalibrationSet:
        flat = np.concatenate(indices)
        # Segment table rebuilt against the subset's own indexing.
        segs: list[Segment] = []
        offset = 0
        for part in indices:
            if part.size:
                segs.append(
                    Segment(
                        movement=Movement(int(cal.labels[part[0]])),
                        start=offset,
                        end=offset + part.size,
                    )
                )
            offset += part.size
        return CalibrationSet(
            features=cal.features[flat],
            labels=cal.labels[flat],
            classes=cal.classes,
            segments=tuple(segs),
        )

    return subset(train_idx), subset(test_idx)
