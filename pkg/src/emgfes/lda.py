"""Linear discriminant analysis decoder.

Shared-covariance Gaussian classifier with diagonal shrinkage. With a
common covariance the class posterior is exactly the softmax of the
linear discriminant scores, so the reported scores are true posteriors.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .calibration import (
    LDA_DEFAULT_SHRINKAGE,
    CalibrationSet,
    DimensionMismatch,
    InsufficientData,
    Prediction,
)
from .labels import Movement


class DegenerateCovariance(Exception):
    pass


@dataclass(frozen=True)
class LdaModel:
    classes: tuple[Movement, ...]
    class_means: np.ndarray  # (k, d)
    shared_cov_inv: np.ndarray  # (d, d)
    priors: np.ndarray  # (k,)
    projection: np.ndarray  # (d, k - 1) discriminant components
    shrinkage: float

    def __post_init__(self):
        if not np.isclose(self.priors.sum(), 1.0):
            raise ValueError("priors must sum to 1")
        if not np.allclose(self.shared_cov_inv, self.shared_cov_inv.T, atol=1e-8):
            raise ValueError("inverse covariance must be symmetric")
        if self.projection.shape[1] != len(self.classes) - 1:
            raise ValueError("projection must have classes - 1 components")

    @property
    def n_features(self) -> int:
        return self.class_means.shape[1]

    def discriminants(self, x: np.ndarray) -> np.ndarray:
        """Linear scores delta_k(x); the quadratic term is class-independent
        and omitted."""
        w = self.shared_cov_inv @ self.class_means.T  # (d, k)
        bias = -0.5 * np.einsum("kd,dk->k", self.class_means, w) + np.log(self.priors)
        return x @ w + bias

    def predict(self, features: np.ndarray) -> Prediction:
        t0 = time.perf_counter()
        x = np.asarray(features, dtype=float)
        if x.shape != (self.n_features,):
            raise DimensionMismatch(f"expected {self.n_features} features, got {x.shape}")
        delta = self.discriminants(x)
        delta = delta - delta.max()
        scores = np.exp(delta)
        scores /= scores.sum()
        label = self.classes[int(np.argmax(scores))]
        return Prediction(
            label=label,
            scores=scores,
            latency_us=(time.perf_counter() - t0) * 1e6,
        )


def train_lda(train: CalibrationSet, shrinkage: float = LDA_DEFAULT_SHRINKAGE) -> LdaModel:
    """Fit class means and a pooled covariance regularized as
    (1 - s) * cov + s * diag(cov)."""
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError("shrinkage must be in [0, 1]")
    if len(train.classes) < 2:
        raise InsufficientData("need at least 2 classes")
    x = train.features
    y = train.labels
    k = len(train.classes)
    d = x.shape[1]
    means = np.zeros((k, d))
    priors = np.zeros(k)
    pooled = np.zeros((d, d))
    for i, cls in enumerate(train.classes):
        xc = x[y == int(cls)]
        if xc.shape[0] < 2:
            raise InsufficientData(f"class {cls.name} needs >= 2 samples")
        means[i] = xc.mean(axis=0)
        priors[i] = xc.shape[0] / x.shape[0]
        centered = xc - means[i]
        pooled += centered.T @ centered
    pooled /= x.shape[0] - k
    cov = (1.0 - shrinkage) * pooled + shrinkage * np.diag(np.diag(pooled))
    try:
        cov_inv = linalg.inv(cov)
    except linalg.LinAlgError as exc:
        raise DegenerateCovariance(str(exc)) from exc
    if not np.all(np.isfinite(cov_inv)):
        raise DegenerateCovariance("inverse covariance is not finite")
    cov_inv = 0.5 * (cov_inv + cov_inv.T)

    # Discriminant components: leading generalized eigenvectors of the
    # between-class scatter against the pooled covariance.
    overall = x.mean(axis=0)
    between = np.zeros((d, d))
    for i in range(k):
        diff = (means[i] - overall)[:, None]
        between += priors[i] * (diff @ diff.T)
    try:
        eigvals, eigvecs = linalg.eigh(between, cov)
    except linalg.LinAlgError as exc:
        raise DegenerateCovariance(str(exc)) from exc
    order = np.argsort(eigvals)[::-1]
    projection = eigvecs[:, order[: k - 1]]

    return LdaModel(
        classes=train.classes,
        class_means=means,
        shared_cov_inv=cov_inv,
        priors=priors,
        projection=projection,
        shrinkage=shrinkage,
    )
