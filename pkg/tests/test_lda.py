"""Linear discriminant decoder against exact Gaussian classification."""

from __future__ import annotations

import numpy as np
import pytest

from emgfes.calibration import CalibrationSet, DimensionMismatch, InsufficientData
from emgfes.labels import Movement
from emgfes.lda import DegenerateCovariance, LdaModel, train_lda
from emgfes.stream import N_CHANNELS


def two_class_isotropic(n_per_class: int, mu: float, rng: np.random.Generator):
    """Unit-variance isotropic Gaussians: class means 0 and mu * e0."""
    x0 = rng.normal(0.0, 1.0, size=(n_per_class, N_CHANNELS))
    x1 = rng.normal(0.0, 1.0, size=(n_per_class, N_CHANNELS))
    x1[:, 0] += mu
    feats = np.vstack([x0, x1]).astype(np.float32)
    labels = np.array(
        [Movement.REST.value] * n_per_class + [Movement.DORSIFLEXION.value] * n_per_class,
        dtype=np.int64,
    )
    return CalibrationSet(
        features=feats,
        labels=labels,
        classes=(Movement.REST, Movement.DORSIFLEXION),
        segments=(),
    )


def separable_blobs(rng: np.random.Generator, n_per_class: int = 200):
    """Five well-separated clusters, one per movement label."""
    feats = []
    labels = []
    for i, m in enumerate(Movement):
        center = np.zeros(N_CHANNELS)
        center[i] = 25.0
        feats.append(rng.normal(0.0, 1.0, size=(n_per_class, N_CHANNELS)) + center)
        labels.extend([m.value] * n_per_class)
    return CalibrationSet(
        features=np.vstack(feats).astype(np.float32),
        labels=np.array(labels, dtype=np.int64),
        classes=tuple(Movement),
        segments=(),
    )


def test_matches_bayes_rule_on_isotropic_gaussians():
    """With equal priors and shared isotropic covariance the optimal rule is
    nearest true mean; the trained decoder disagrees with it on at most 0.5%
    of 10^4 fresh points."""
    rng = np.random.default_rng(4242)
    mu = 4.0
    cal = two_class_isotropic(20_000, mu, rng)
    model = train_lda(cal)

    n_test = 10_000
    t0 = rng.normal(0.0, 1.0, size=(n_test // 2, N_CHANNELS))
    t1 = rng.normal(0.0, 1.0, size=(n_test // 2, N_CHANNELS))
    t1[:, 0] += mu
    tests = np.vstack([t0, t1])

    m1 = np.zeros(N_CHANNELS)
    m1[0] = mu
    bayes = np.where((tests**2).sum(axis=1) <= ((tests - m1) ** 2).sum(axis=1), 0, 1)
    decoded = np.argmax(model.discriminants(tests), axis=1)
    disagreement = float(np.mean(decoded != bayes))
    assert disagreement <= 0.005


def test_scores_are_exact_posteriors():
    """Softmax of the linear discriminants equals the Gaussian posterior
    computed from the model's own means and covariance."""
    rng = np.random.default_rng(9)
    cal = two_class_isotropic(500, 2.0, rng)
    model = train_lda(cal)
    x = rng.normal(0.0, 1.0, size=N_CHANNELS)
    pred = model.predict(x)

    log_post = np.array(
        [
            -0.5 * (x - m) @ model.shared_cov_inv @ (x - m) + np.log(p)
            for m, p in zip(model.class_means, model.priors)
        ]
    )
    log_post -= log_post.max()
    expect = np.exp(log_post)
    expect /= expect.sum()
    assert np.allclose(pred.scores, expect, atol=1e-10)
    assert pred.scores.sum() == pytest.approx(1.0)


def test_separable_blobs_train_accuracy():
    rng = np.random.default_rng(21)
    cal = separable_blobs(rng)
    model = train_lda(cal)
    hits = sum(model.predict(f).label == Movement(l) for f, l in zip(cal.features, cal.labels))
    assert hits / cal.labels.size > 0.99


def test_predict_reports_argmax_label():
    rng = np.random.default_rng(2)
    model = train_lda(two_class_isotropic(200, 3.0, rng))
    pred = model.predict(np.zeros(N_CHANNELS))
    assert pred.label == model.classes[int(np.argmax(pred.scores))]
    assert pred.latency_us >= 0.0


def test_predict_rejects_wrong_dimension():
    rng = np.random.default_rng(2)
    model = train_lda(two_class_isotropic(100, 3.0, rng))
    with pytest.raises(DimensionMismatch):
        model.predict(np.zeros(N_CHANNELS + 1))


def test_train_needs_two_classes():
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(50, N_CHANNELS)).astype(np.float32)
    cal = CalibrationSet(
        features=feats,
        labels=np.full(50, Movement.REST.value, dtype=np.int64),
        classes=(Movement.REST,),
        segments=(),
    )
    with pytest.raises(InsufficientData):
        train_lda(cal)


def test_train_needs_samples_per_class():
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(3, N_CHANNELS)).astype(np.float32)
    cal = CalibrationSet(
        features=feats,
        labels=np.array(
            [Movement.REST.value, Movement.REST.value, Movement.DORSIFLEXION.value],
            dtype=np.int64,
        ),
        classes=(Movement.REST, Movement.DORSIFLEXION),
        segments=(),
    )
    with pytest.raises(InsufficientData):
        train_lda(cal)


def test_shrinkage_validation():
    rng = np.random.default_rng(0)
    cal = two_class_isotropic(50, 2.0, rng)
    with pytest.raises(ValueError):
        train_lda(cal, shrinkage=-0.1)
    with pytest.raises(ValueError):
        train_lda(cal, shrinkage=1.5)


def test_degenerate_covariance_detected():
    """Features confined to a lower-dimensional subspace with no shrinkage
    leave the pooled covariance singular."""
    rng = np.random.default_rng(1)
    feats = np.zeros((80, N_CHANNELS), dtype=np.float32)
    feats[:, 0] = rng.normal(size=80)  # all other dimensions constant
    feats[40:, 0] += 5.0
    cal = CalibrationSet(
        features=feats,
        labels=np.array([Movement.REST.value] * 40 + [Movement.DORSIFLEXION.value] * 40, dtype=np.int64),
        classes=(Movement.REST, Movement.DORSIFLEXION),
        segments=(),
    )
    with pytest.raises(DegenerateCovariance):
        train_lda(cal, shrinkage=0.0)


def test_projection_shape():
    rng = np.random.default_rng(3)
    model = train_lda(separable_blobs(rng, n_per_class=60))
    assert model.projection.shape == (N_CHANNELS, len(Movement) - 1)
    assert model.n_features == N_CHANNELS
