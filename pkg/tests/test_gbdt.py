"""Boosted-tree decoder: training behavior and the packed prediction path."""

from __future__ import annotations

import math

import numpy as np
import pytest

from emgfes.calibration import CalibrationSet, DimensionMismatch, InsufficientData
from emgfes.gbdt import GbdtModel, GbdtParams, Tree, train_gbdt
from emgfes.labels import Movement
from emgfes.stream import N_CHANNELS

FAST = GbdtParams(iterations=30, max_depth=4, learning_rate=0.1, n_bins=16)


def blob_cal(rng: np.random.Generator, n_per_class: int = 120, spread: float = 1.0):
    classes = (Movement.REST, Movement.DORSIFLEXION, Movement.PLANTARFLEXION)
    feats = []
    labels = []
    for i, m in enumerate(classes):
        center = np.zeros(N_CHANNELS)
        center[2 * i] = 8.0
        feats.append(rng.normal(0.0, spread, size=(n_per_class, N_CHANNELS)) + center)
        labels.extend([m.value] * n_per_class)
    return CalibrationSet(
        features=np.vstack(feats).astype(np.float32),
        labels=np.array(labels, dtype=np.int64),
        classes=classes,
        segments=(),
    )


@pytest.fixture(scope="module")
def model() -> GbdtModel:
    return train_gbdt(blob_cal(np.random.default_rng(8)), FAST)


def test_tree_count(model):
    assert len(model.trees) == FAST.iterations * len(model.classes)


def test_loss_curve_shape(model):
    losses = model.train_losses
    assert len(losses) == FAST.iterations + 1
    assert losses[0] == pytest.approx(math.log(len(model.classes)), abs=1e-12)
    diffs = np.diff(losses)
    assert np.all(diffs <= 1e-12)
    assert losses[-1] < losses[0]


def test_training_accuracy(model):
    cal = blob_cal(np.random.default_rng(8))
    hits = sum(model.predict(f).label == Movement(l) for f, l in zip(cal.features, cal.labels))
    assert hits / cal.labels.size > 0.98


def test_scores_are_softmax(model):
    pred = model.predict(np.zeros(N_CHANNELS))
    assert pred.scores.sum() == pytest.approx(1.0)
    assert (pred.scores > 0).all()
    assert pred.label == model.classes[int(np.argmax(pred.scores))]


def eval_tree(tree: Tree, bins: np.ndarray) -> float:
    node = 0
    while tree.feature[node] >= 0:
        if bins[tree.feature[node]] <= tree.threshold_bin[node]:
            node = int(tree.left[node])
        else:
            node = int(tree.right[node])
    return float(tree.value[node])


def test_packed_walk_matches_recursive_traversal(model):
    """The jump-table prediction equals a plain per-tree descent."""
    rng = np.random.default_rng(77)
    k = len(model.classes)
    for _ in range(50):
        x = rng.normal(0.0, 6.0, size=N_CHANNELS)
        bins = model.bin_features(x)
        slow = np.zeros(k)
        for i, tree in enumerate(model.trees):
            slow[i % k] += eval_tree(tree, bins)
        assert np.allclose(model.raw_scores(x), slow, atol=1e-9)


def test_depth_respects_limit(model):
    assert max(t.depth for t in model.trees) <= FAST.max_depth


def test_bin_features_clipping(model):
    lo_edge = model.bin_lo - 100.0
    hi_edge = model.bin_lo + model.bin_width * (FAST.n_bins + 50)
    assert (model.bin_features(lo_edge) == 0).all()
    assert (model.bin_features(hi_edge) == FAST.n_bins - 1).all()


def test_constant_feature_column_is_harmless():
    rng = np.random.default_rng(4)
    cal = blob_cal(rng, n_per_class=60)
    feats = cal.features.copy()
    feats[:, 5] = 3.25  # zero-width bin range
    cal = CalibrationSet(features=feats, labels=cal.labels, classes=cal.classes, segments=())
    m = train_gbdt(cal, FAST)
    assert m.bin_width[5] == 1.0
    m.predict(feats[0])


def test_training_is_deterministic():
    cal = blob_cal(np.random.default_rng(15), n_per_class=50)
    a = train_gbdt(cal, FAST)
    b = train_gbdt(cal, FAST)
    assert a.train_losses == b.train_losses
    for ta, tb in zip(a.trees, b.trees):
        assert np.array_equal(ta.feature, tb.feature)
        assert np.array_equal(ta.threshold_bin, tb.threshold_bin)
        assert np.array_equal(ta.value, tb.value)


def test_raw_scores_rejects_wrong_dimension(model):
    with pytest.raises(DimensionMismatch):
        model.raw_scores(np.zeros(N_CHANNELS - 1))


def test_needs_two_classes():
    rng = np.random.default_rng(0)
    cal = CalibrationSet(
        features=rng.normal(size=(40, N_CHANNELS)).astype(np.float32),
        labels=np.full(40, Movement.REST.value, dtype=np.int64),
        classes=(Movement.REST,),
        segments=(),
    )
    with pytest.raises(InsufficientData):
        train_gbdt(cal, FAST)


def test_params_validation():
    with pytest.raises(ValueError):
        GbdtParams(iterations=0)
    with pytest.raises(ValueError):
        GbdtParams(learning_rate=0.0)
    with pytest.raises(ValueError):
        GbdtParams(learning_rate=1.5)
    with pytest.raises(ValueError):
        GbdtParams(l2_leaf_reg=-1.0)
    with pytest.raises(ValueError):
        GbdtParams(n_bins=1)


def test_model_validates_tree_count(model):
    with pytest.raises(ValueError):
        GbdtModel(
            classes=model.classes,
            params=model.params,
            bin_lo=model.bin_lo,
            bin_width=model.bin_width,
            trees=model.trees[:-1],
            train_losses=model.train_losses,
        )


def test_defaults():
    p = GbdtParams()
    assert (p.iterations, p.max_depth, p.learning_rate, p.l2_leaf_reg, p.n_bins) == (
        300,
        10,
        0.04,
        0.014,
        32,
    )
