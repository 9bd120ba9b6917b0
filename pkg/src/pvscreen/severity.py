"""Random-forest regression of a severity score and its three-level grade.

Trees are plain CART regressors grown greedily on squared error.  Grade
targets are encoded nil=0, minor=1, major=2 and a continuous score is cut
back into grades at 0.5 and 1.5.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import IntEnum

import numpy as np

from . import container
from .errors import ConfigError, ModelFormatError

# two SSE values closer than this (relative) count as a tie
_SSE_TOL = 1e-12


class SeverityGrade(IntEnum):
    NIL = 0
    MINOR = 1
    MAJOR = 2

    @property
    def slug(self) -> str:
        return self.name.lower()

    @classmethod
    def from_slug(cls, slug: str) -> "SeverityGrade":
        return cls[slug.strip().upper()]


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = 12
    min_samples_leaf: int = 2
    features_per_split: int = 3
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0 or None")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be >= 1")
        if self.features_per_split < 1:
            raise ConfigError("features_per_split must be >= 1")


@dataclass
class TreeNode:
    """Leaf when ``feature`` is -1; otherwise ``x[feature] <= threshold`` goes left."""

    value: float
    n_samples: int
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(self.left.depth(), self.right.depth())

    def n_leaves(self) -> int:
        return 1 if self.is_leaf else self.left.n_leaves() + self.right.n_leaves()

    def predict_one(self, x) -> float:
        node = self
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.value

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.array([self.predict_one(row) for row in X])


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty 2-D array")
    if y.shape != (X.shape[0],):
        raise ValueError("y must have one target per row of X")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("X and y must be finite")
    return X, y


def best_split(X, y, features, min_samples_leaf: int):
    """Lowest weighted child SSE over the given features.

    Candidate thresholds are midpoints between consecutive distinct values.
    Ties keep the earlier feature in ``features`` and then the smaller
    threshold.  Returns ``(feature, threshold, sse)`` or None.
    """
    n = len(y)
    best = None
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        total, total_sq = csum[-1], csq[-1]
        for i in range(min_samples_leaf - 1, n - min_samples_leaf):
            if xs[i] == xs[i + 1]:
                continue
            nl, nr = i + 1, n - i - 1
            sl, sr = csum[i], total - csum[i]
            sse = (csq[i] - sl * sl / nl) + ((total_sq - csq[i]) - sr * sr / nr)
            if best is None or sse < best[2] - _SSE_TOL * max(1.0, abs(best[2])):
                best = (int(f), 0.5 * (xs[i] + xs[i + 1]), sse)
    return best


def fit_tree(X, y, cfg: ForestConfig, rng: np.random.Generator) -> TreeNode:
    X, y = _check_xy(X, y)
    n_features = X.shape[1]
    k = min(cfg.features_per_split, n_features)

    def grow(idx, depth):
        ys = y[idx]
        # fsum is exactly rounded, so leaf values do not depend on row order;
        # the clip undoes a possible last-ulp overshoot of the division
        mean = min(max(math.fsum(ys) / len(ys), ys.min()), ys.max())
        node = TreeNode(float(mean), len(idx))
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            return node
        if len(idx) < 2 * cfg.min_samples_leaf or np.all(ys == ys[0]):
            return node
        feats = np.sort(rng.choice(n_features, size=k, replace=False))
        split = best_split(X[idx], ys, feats, cfg.min_samples_leaf)
        if split is None:
            return node
        node.feature, node.threshold, _ = split
        go_left = X[idx, node.feature] <= node.threshold
        node.left = grow(idx[go_left], depth + 1)
        node.right = grow(idx[~go_left], depth + 1)
        return node

    return grow(np.arange(len(y)), 0)


@dataclass
class RandomForestModel:
    config: ForestConfig
    trees: list
    grade_thresholds: tuple = (0.5, 1.5)

    def predict(self, X) -> np.ndarray:
        """Mean of the tree predictions for each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.mean([tree.predict(X) for tree in self.trees], axis=0)

    def split_counts(self, n_features: int = 7) -> np.ndarray:
        counts = np.zeros(n_features, dtype=np.int64)
        stack = list(self.trees)
        while stack:
            node = stack.pop()
            if not node.is_leaf:
                counts[node.feature] += 1
                stack.extend((node.left, node.right))
        return counts


def fit_forest(X, y, cfg: ForestConfig) -> RandomForestModel:
    """Each tree gets its own child seed of ``cfg.seed`` (bootstrap draw, then growth)."""
    X, y = _check_xy(X, y)
    n = len(y)
    trees = []
    for child in np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees):
        rng = np.random.default_rng(child)
        idx = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
        trees.append(fit_tree(X[idx], y[idx], cfg, rng))
    return RandomForestModel(cfg, trees)


def predict_score(model: RandomForestModel, features) -> float:
    x = features.as_array() if hasattr(features, "as_array") else np.asarray(features, dtype=np.float64)
    return float(np.mean([tree.predict_one(x) for tree in model.trees]))


def grade(score: float, thresholds=(0.5, 1.5)) -> SeverityGrade:
    t1, t2 = thresholds
    if not t1 < t2:
        raise ValueError("grade thresholds must be increasing")
    if score < t1:
        return SeverityGrade.NIL
    if score < t2:
        return SeverityGrade.MINOR
    return SeverityGrade.MAJOR


# ---------------------------------------------------------------------------
# serialization: each tree is flattened in pre-order into feature / threshold
# / value arrays; a leaf has feature -1, and an internal node is followed by
# its whole left subtree and then its right subtree.


def _flatten(node, feats, thresholds, values, counts):
    feats.append(node.feature)
    thresholds.append(node.threshold)
    values.append(node.value)
    counts.append(node.n_samples)
    if not node.is_leaf:
        _flatten(node.left, feats, thresholds, values, counts)
        _flatten(node.right, feats, thresholds, values, counts)


def _unflatten(feats, thresholds, values, counts):
    pos = 0

    def build():
        nonlocal pos
        if pos >= len(feats):
            raise ModelFormatError("tree arrays end before the tree is complete")
        node = TreeNode(float(values[pos]), int(counts[pos]), int(feats[pos]), float(thresholds[pos]))
        pos += 1
        if not node.is_leaf:
            node.left = build()
            node.right = build()
        return node

    root = build()
    if pos != len(feats):
        raise ModelFormatError("tree arrays hold trailing nodes")
    return root


def save_forest(model: RandomForestModel, path) -> None:
    feats, thresholds, values, counts, sizes = [], [], [], [], []
    for tree in model.trees:
        before = len(feats)
        _flatten(tree, feats, thresholds, values, counts)
        sizes.append(len(feats) - before)
    header = {"config": asdict(model.config), "grade_thresholds": list(model.grade_thresholds)}
    tensors = {
        "tree_sizes": np.array(sizes, dtype=np.int32),
        "feature": np.array(feats, dtype=np.int32),
        "threshold": np.array(thresholds, dtype=np.float64),
        "value": np.array(values, dtype=np.float64),
        "n_samples": np.array(counts, dtype=np.int32),
    }
    container.write_container(path, "forest", header, tensors)


def load_forest(path) -> RandomForestModel:
    header, t = container.read_container(path, kind="forest")
    try:
        cfg = ForestConfig(**header["config"])
        sizes = t["tree_sizes"]
        arrays = [t["feature"], t["threshold"], t["value"], t["n_samples"]]
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"{path}: incomplete forest file: {exc}") from exc
    if len(sizes) != cfg.n_trees or int(sizes.sum()) != len(arrays[0]):
        raise ModelFormatError(f"{path}: tree table does not match node arrays")
    trees, start = [], 0
    for size in sizes:
        trees.append(_unflatten(*(a[start:start + size] for a in arrays)))
        start += int(size)
    return RandomForestModel(cfg, trees, tuple(header.get("grade_thresholds", (0.5, 1.5))))
