"""Gradient-boosted decision tree decoder, built from scratch.

One-vs-all regression trees fit to softmax cross-entropy gradients,
aggregated through a softmax. Features are quantized once into uniform
histogram bins; trees grow level-wise, scoring every (node, feature, bin)
split in two bincount passes per level. Nodes whose best regularized gain
is not positive stop growing, which keeps late iterations cheap once
residuals flatten.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .calibration import (
    CalibrationSet,
    DimensionMismatch,
    InsufficientData,
    Prediction,
)
from .labels import Movement

MIN_SPLIT_GAIN = 1e-12


@dataclass(frozen=True)
class GbdtParams:
    iterations: int = 300
    max_depth: int = 10
    learning_rate: float = 0.04
    l2_leaf_reg: float = 0.014
    n_bins: int = 32

    def __post_init__(self):
        if self.iterations < 1 or self.max_depth < 1 or self.n_bins < 2:
            raise ValueError("iterations, max_depth and n_bins must be positive")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.l2_leaf_reg < 0:
            raise ValueError("l2_leaf_reg must be >= 0")


@dataclass(frozen=True)
class Tree:
    """Flat node arrays; leaves have feature -1 and point to themselves."""

    feature: np.ndarray  # (nodes,) int32
    threshold_bin: np.ndarray  # (nodes,) int32; left when bin <= threshold
    left: np.ndarray  # (nodes,) int32
    right: np.ndarray  # (nodes,) int32
    value: np.ndarray  # (nodes,) float64, nonzero on leaves only

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max()) if self.n_nodes else 0


@dataclass(frozen=True)
class GbdtModel:
    classes: tuple[Movement, ...]
    params: GbdtParams
    bin_lo: np.ndarray  # (d,)
    bin_width: np.ndarray  # (d,)
    trees: tuple[Tree, ...]  # iteration-major, class-minor
    train_losses: tuple[float, ...]  # length iterations + 1, starts at log(k)
    # Packed copies of all trees for vectorized prediction.
    _packed: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.trees) != self.params.iterations * len(self.classes):
            raise ValueError("tree count must equal iterations * classes")
        offsets = np.zeros(len(self.trees), dtype=np.int64)
        total = 0
        for i, t in enumerate(self.trees):
            offsets[i] = total
            total += t.n_nodes
        feature = np.concatenate([t.feature for t in self.trees])
        packed = {
            "offset": offsets,
            "feature": feature,
            # Leaves keep left == right == self, so the walk needs no leaf
            # test; their feature index is remapped to 0 only so it is a
            # valid bin lookup.
            "walk_feature": np.maximum(feature, 0),
            "threshold": np.concatenate([t.threshold_bin for t in self.trees]),
            "left": np.concatenate(
                [t.left + off for t, off in zip(self.trees, offsets)]
            ).astype(np.int64),
            "right": np.concatenate(
                [t.right + off for t, off in zip(self.trees, offsets)]
            ).astype(np.int64),
            "value": np.concatenate([t.value for t in self.trees]),
            "class_of": np.tile(
                np.arange(len(self.classes)), self.params.iterations
            ),
            # Deepest tree in the ensemble; the prediction walk needs no
            # more steps than this (leaves self-loop, so extra steps are
            # wasted work, not errors).
            "walk_steps": max((t.depth for t in self.trees), default=0),
        }
        self._packed.update(packed)

    @property
    def n_features(self) -> int:
        return self.bin_lo.size

    def bin_features(self, x: np.ndarray) -> np.ndarray:
        b = np.floor((x - self.bin_lo) / self.bin_width).astype(np.int64)
        return np.clip(b, 0, self.params.n_bins - 1)

    def raw_scores(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        if x.shape != (self.n_features,):
            raise DimensionMismatch(f"expected {self.n_features} features, got {x.shape}")
        bins = self.bin_features(x)
        p = self._packed
        # For a fixed input the branch taken at each node is fixed, so the
        # whole ensemble reduces to one jump table walked depth times.
        jump = np.where(bins[p["walk_feature"]] > p["threshold"], p["right"], p["left"])
        node = p["offset"].copy()
        for _ in range(p["walk_steps"]):
            node = jump[node]
        return np.bincount(
            p["class_of"], weights=p["value"][node], minlength=len(self.classes)
        )

    def predict(self, features: np.ndarray) -> Prediction:
        t0 = time.perf_counter()
        raw = self.raw_scores(features)
        raw = raw - raw.max()
        scores = np.exp(raw)
        scores /= scores.sum()
        label = self.classes[int(np.argmax(scores))]
        return Prediction(
            label=label,
            scores=scores,
            latency_us=(time.perf_counter() - t0) * 1e6,
        )


def _dense_nodes(node_of: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted unique node ids and each sample's index into them. Node ids are
    small dense tree indices, so a bincount lookup beats sorting."""
    present = np.bincount(node_of)
    frontier = np.flatnonzero(present)
    lookup = np.zeros(present.size, dtype=np.int64)
    lookup[frontier] = np.arange(frontier.size)
    return frontier, lookup[node_of]


def _grow_tree(
    binned: np.ndarray,
    key_base: np.ndarray,
    g: np.ndarray,
    params: GbdtParams,
    root_cnt: np.ndarray | None = None,
) -> tuple[Tree, np.ndarray]:
    """Fit one regression tree to gradients; returns the tree and each
    sample's leaf index. ``root_cnt`` is the (1, features, bins) count
    histogram of the full sample set; it never changes between trees, so
    callers fitting many trees should precompute it once."""
    n, n_feat = binned.shape
    n_bins = params.n_bins
    lam = params.l2_leaf_reg
    lr = params.learning_rate
    stride = n_feat * n_bins

    feature = [-1]
    threshold = [0]
    left = [0]
    right = [0]
    value = [0.0]

    leaf_of = np.zeros(n, dtype=np.int64)
    node_of = np.zeros(n, dtype=np.int64)  # tree node per active sample
    idx = np.arange(n)

    for level in range(params.max_depth):
        if idx.size == 0:
            break
        if level == 0:
            # Every sample sits at the root: no routing keys to build, and
            # the count histogram is the same for every tree.
            frontier = np.zeros(1, dtype=np.int64)
            dense = node_of  # all zeros
            m = 1
            keys = key_base.ravel()
            if root_cnt is None:
                root_cnt = np.bincount(keys, minlength=stride).reshape(1, n_feat, n_bins)
            cnt = root_cnt
            gw = g
        else:
            frontier, dense = _dense_nodes(node_of)
            m = frontier.size
            keys = (dense[:, None] * stride + key_base[idx]).ravel()
            cnt = np.bincount(keys, minlength=m * stride).reshape(m, n_feat, n_bins)
            gw = g[idx]
        gsum = np.bincount(
            keys, weights=np.repeat(gw, n_feat), minlength=m * stride
        ).reshape(m, n_feat, n_bins)
        cnt_left = cnt.cumsum(axis=2)
        g_left = gsum.cumsum(axis=2)
        cnt_tot = cnt_left[:, :1, -1:].copy()  # same totals for every feature
        g_tot = g_left[:, :1, -1:].copy()
        right_part = g_tot - g_left
        np.square(right_part, out=right_part)
        right_part /= (cnt_tot - cnt_left) + lam
        gain = np.square(g_left)
        gain /= cnt_left + lam
        gain += right_part
        gain -= np.square(g_tot) / (cnt_tot + lam)
        flat_gain = gain.reshape(m, -1)
        best = np.argmax(flat_gain, axis=1)
        best_gain = flat_gain[np.arange(m), best]
        may_split = best_gain > MIN_SPLIT_GAIN

        split_feat = np.full(m, -1, dtype=np.int64)
        split_bin = np.zeros(m, dtype=np.int64)
        child_left = np.zeros(m, dtype=np.int64)
        child_right = np.zeros(m, dtype=np.int64)
        for j in range(m):
            node = int(frontier[j])
            if may_split[j]:
                split_feat[j] = best[j] // n_bins
                split_bin[j] = best[j] % n_bins
                feature[node] = int(split_feat[j])
                threshold[node] = int(split_bin[j])
                child_left[j] = len(feature)
                child_right[j] = len(feature) + 1
                left[node] = child_left[j]
                right[node] = child_right[j]
                for _ in range(2):
                    feature.append(-1)
                    threshold.append(0)
                    left.append(len(feature) - 1)
                    right.append(len(feature) - 1)
                    value.append(0.0)
            else:
                value[node] = -lr * float(g_tot[j, 0, 0]) / (float(cnt_tot[j, 0, 0]) + lam)

        finalize = split_feat[dense] < 0
        leaf_of[idx[finalize]] = node_of[finalize]
        keep = ~finalize
        if keep.any():
            sf = split_feat[dense[keep]]
            go_left = binned[idx[keep], sf] <= split_bin[dense[keep]]
            node_of = np.where(go_left, child_left[dense[keep]], child_right[dense[keep]])
            idx = idx[keep]
        else:
            idx = idx[:0]
            node_of = node_of[:0]

    if idx.size:
        # Depth limit reached: finalize whatever is still open.
        frontier, dense = _dense_nodes(node_of)
        for j, node in enumerate(frontier):
            sel = dense == j
            gm = float(g[idx[sel]].sum())
            value[int(node)] = -lr * gm / (float(sel.sum()) + lam)
        leaf_of[idx] = node_of

    tree = Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold_bin=np.asarray(threshold, dtype=np.int32),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
    )
    return tree, leaf_of


def train_gbdt(train: CalibrationSet, params: GbdtParams | None = None) -> GbdtModel:
    """Boost one-vs-all trees on softmax cross-entropy gradients."""
    params = params or GbdtParams()
    if len(train.classes) < 2:
        raise InsufficientData("need at least 2 classes")
    x = train.features
    n, n_feat = x.shape
    k = len(train.classes)

    lo = x.min(axis=0)
    hi = x.max(axis=0)
    width = (hi - lo) / params.n_bins
    width[width == 0] = 1.0
    binned = np.clip(
        np.floor((x - lo) / width).astype(np.int64), 0, params.n_bins - 1
    )
    key_base = binned + np.arange(n_feat, dtype=np.int64)[None, :] * params.n_bins

    cls_index = {int(c): i for i, c in enumerate(train.classes)}
    y = np.array([cls_index[int(v)] for v in train.labels])
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0

    root_cnt = np.bincount(key_base.ravel(), minlength=n_feat * params.n_bins).reshape(
        1, n_feat, params.n_bins
    )
    scores = np.zeros((n, k))
    trees: list[Tree] = []
    losses: list[float] = []

    def mean_nll() -> float:
        z = scores - scores.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1))
        return float(np.mean(logsum - z[np.arange(n), y]))

    losses.append(mean_nll())
    for _ in range(params.iterations):
        z = scores - scores.max(axis=1, keepdims=True)
        ez = np.exp(z)
        probs = ez / ez.sum(axis=1, keepdims=True)
        grad = probs - onehot
        for c in range(k):
            tree, leaf_of = _grow_tree(binned, key_base, grad[:, c], params, root_cnt)
            trees.append(tree)
            scores[:, c] += tree.value[leaf_of]
        losses.append(mean_nll())

    return GbdtModel(
        classes=train.classes,
        params=params,
        bin_lo=lo,
        bin_width=width,
        trees=tuple(trees),
        train_losses=tuple(losses),
    )
