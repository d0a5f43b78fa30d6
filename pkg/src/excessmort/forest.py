"""Bagged variance-splitting regression trees with reproducible seeding.

The ensemble is deterministic in (data, config, master_seed): tree ``i``
draws its bootstrap resample and per-node feature subsets from a generator
seeded with the pair ``(master_seed, i)`` (mixed through numpy's
``SeedSequence``), so neither the worker count nor the scheduling order can
change the result.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from ._parallel import run_chunked
from .errors import DimensionMismatch, EmptyTestSet, TooFewRows
from .panel import TrainingRows

_LEAF = -1
_FOREST_FORMAT = "excessmort-forest/1"


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 1000
    mtry: int = 6
    min_leaf: int = 5
    max_depth: int | None = None
    master_seed: int = 0
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be positive, got {self.n_trees}")
        if not 1 <= self.mtry <= 16:
            raise ValueError(f"mtry must be in [1, 16], got {self.mtry}")
        if self.min_leaf < 1:
            raise ValueError(f"min_leaf must be positive, got {self.min_leaf}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError(
                f"train_fraction must be in (0, 1], got {self.train_fraction}"
            )


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat-array binary regression tree.

    ``feature[i] == -1`` marks a leaf; unused slots (thresholds of leaves,
    values of internal nodes) hold 0.0 so the arrays stay JSON-portable.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int((self.feature == _LEAF).sum())

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Route every row of X to its leaf value."""
        node = np.zeros(X.shape[0], dtype=np.intp)
        while True:
            feat = self.feature[node]
            active = np.flatnonzero(feat != _LEAF)
            if active.size == 0:
                break
            cur = node[active]
            go_left = X[active, feat[active]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
        return self.value[node]

    def equals(self, other: "Tree") -> bool:
        return (
            np.array_equal(self.feature, other.feature)
            and np.array_equal(self.threshold, other.threshold)
            and np.array_equal(self.left, other.left)
            and np.array_equal(self.right, other.right)
            and np.array_equal(self.value, other.value)
        )


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple[Tree, ...]
    config: ForestConfig
    feature_names: tuple[str, ...]

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def equals(self, other: "Forest") -> bool:
        return (
            self.config == other.config
            and self.feature_names == other.feature_names
            and len(self.trees) == len(other.trees)
            and all(a.equals(b) for a, b in zip(self.trees, other.trees))
        )


def _best_split(X, y_node, idx, features, min_leaf):
    """Variance-minimizing split over the candidate features.

    Returns (sse, feature, threshold, order, left_count) or None. Candidate
    thresholds are midpoints between consecutive distinct sorted values;
    exact score ties resolve to the lowest feature index, then the lowest
    threshold.
    """
    n = len(idx)
    best = None
    positions = np.arange(1, n)
    for f in features:
        x = X[idx, f]
        order = np.argsort(x)
        xs = x[order]
        if xs[0] == xs[-1]:
            continue
        valid = (
            (xs[1:] > xs[:-1])
            & (positions >= min_leaf)
            & (n - positions >= min_leaf)
        )
        if not valid.any():
            continue
        ys = y_node[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        k = np.flatnonzero(valid) + 1
        left_sum, left_sq = csum[k - 1], csq[k - 1]
        right_sum, right_sq = csum[-1] - left_sum, csq[-1] - left_sq
        sse = (
            left_sq
            - left_sum * left_sum / k
            + right_sq
            - right_sum * right_sum / (n - k)
        )
        j = int(np.argmin(sse))  # first minimum -> lowest threshold
        if best is None or sse[j] < best[0]:
            kj = int(k[j])
            lo, hi = xs[kj - 1], xs[kj]
            threshold = (lo + hi) / 2.0
            if threshold >= hi:  # adjacent floats: keep routing == partition
                threshold = lo
            best = (float(sse[j]), int(f), float(threshold), order, kj)
    return best


def _grow(X, y, config: ForestConfig, rng) -> Tree:
    n, p = X.shape
    if n < config.min_leaf:
        raise TooFewRows(
            f"need at least min_leaf={config.min_leaf} rows, got {n}"
        )
    mtry = min(config.mtry, p)

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(_LEAF)
        threshold.append(0.0)
        left.append(_LEAF)
        right.append(_LEAF)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    # depth-first, left child first; feature subsets are drawn in this order
    stack = [(root, np.arange(n, dtype=np.intp), 0)]
    while stack:
        slot, idx, depth = stack.pop()
        y_node = y[idx]
        depth_ok = config.max_depth is None or depth < config.max_depth
        split = None
        if depth_ok and len(idx) >= 2 * config.min_leaf and y_node.min() < y_node.max():
            tried = np.sort(rng.choice(p, size=mtry, replace=False))
            split = _best_split(X, y_node, idx, tried, config.min_leaf)
        if split is None:
            value[slot] = float(y_node.mean())
            continue
        _, f, thr, order, kj = split
        feature[slot] = f
        threshold[slot] = thr
        left_slot, right_slot = new_node(), new_node()
        left[slot] = left_slot
        right[slot] = right_slot
        sorted_idx = idx[order]
        stack.append((right_slot, sorted_idx[kj:], depth + 1))
        stack.append((left_slot, sorted_idx[:kj], depth + 1))

    return Tree(
        feature=np.asarray(feature, dtype=np.intp),
        threshold=np.asarray(threshold),
        left=np.asarray(left, dtype=np.intp),
        right=np.asarray(right, dtype=np.intp),
        value=np.asarray(value),
    )


def fit_tree(rows: TrainingRows, config: ForestConfig, tree_seed) -> Tree:
    """Fit a single tree on the given rows (no bootstrap resampling)."""
    rng = np.random.default_rng(tree_seed)
    return _grow(np.asarray(rows.features, dtype=float), np.asarray(rows.targets, dtype=float), config, rng)


def _fit_tree_range(start, stop, X, y, config, master_seed):
    out = []
    for i in range(start, stop):
        rng = np.random.default_rng((master_seed, i))
        boot = rng.integers(0, len(y), size=len(y))
        out.append(_grow(X[boot], y[boot], config, rng))
    return out


def fit_forest(
    train: TrainingRows, config: ForestConfig, n_workers: int = 1
) -> Forest:
    """Fit ``config.n_trees`` trees, each on its own bootstrap resample.

    Tree ``i`` is seeded from ``(config.master_seed, i)``; the fitted forest
    is identical for any ``n_workers``.
    """
    if len(train) == 0:
        raise TooFewRows("training set is empty")
    X = np.ascontiguousarray(train.features, dtype=float)
    y = np.ascontiguousarray(train.targets, dtype=float)
    trees = run_chunked(
        _fit_tree_range,
        config.n_trees,
        n_workers,
        args=(X, y, config, config.master_seed),
    )
    return Forest(
        trees=tuple(trees),
        config=config,
        feature_names=tuple(train.feature_names),
    )


def split_train_test(rows: TrainingRows, fraction: float, seed) -> tuple[TrainingRows, TrainingRows]:
    """Disjoint random split with |train| = round(fraction * n)."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = len(rows)
    if n < 2:
        raise TooFewRows(f"need at least 2 rows to split, got {n}")
    n_train = int(round(fraction * n))
    if n_train == 0:
        raise TooFewRows(f"fraction {fraction} leaves an empty training set")
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return rows.subset(train_idx), rows.subset(test_idx)


def predict_rates(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Ensemble predictions for a batch of feature rows."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    p = len(forest.feature_names)
    if X.shape[1] != p:
        raise DimensionMismatch(f"expected {p} features, got {X.shape[1]}")
    total = np.zeros(X.shape[0])
    for tree in forest.trees:  # fixed order keeps the sum deterministic
        total += tree.predict(X)
    return total / forest.n_trees


def predict_rate(forest: Forest, features) -> float:
    """Mean of all tree predictions for one feature vector."""
    features = np.asarray(features, dtype=float)
    if features.ndim != 1:
        raise DimensionMismatch(f"expected a 1-D feature vector, got ndim={features.ndim}")
    return float(predict_rates(forest, features[None, :])[0])


def evaluate_mse(forest: Forest, test: TrainingRows) -> float:
    if len(test) == 0:
        raise EmptyTestSet("cannot evaluate MSE on an empty test set")
    pred = predict_rates(forest, test.features)
    resid = pred - np.asarray(test.targets, dtype=float)
    return float(np.mean(resid * resid))


# serialization -----------------------------------------------------------


def forest_to_dict(forest: Forest) -> dict:
    return {
        "format": _FOREST_FORMAT,
        "config": asdict(forest.config),
        "feature_names": list(forest.feature_names),
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
            }
            for t in forest.trees
        ],
    }


def forest_from_dict(doc: dict) -> Forest:
    if doc.get("format") != _FOREST_FORMAT:
        raise ValueError(f"not a serialized forest: format={doc.get('format')!r}")
    trees = tuple(
        Tree(
            feature=np.asarray(t["feature"], dtype=np.intp),
            threshold=np.asarray(t["threshold"], dtype=float),
            left=np.asarray(t["left"], dtype=np.intp),
            right=np.asarray(t["right"], dtype=np.intp),
            value=np.asarray(t["value"], dtype=float),
        )
        for t in doc["trees"]
    )
    return Forest(
        trees=trees,
        config=ForestConfig(**doc["config"]),
        feature_names=tuple(doc["feature_names"]),
    )


def save_forest(forest: Forest, path) -> None:
    """Write the forest as portable JSON (floats round-trip exactly)."""
    with open(path, "w") as fh:
        json.dump(forest_to_dict(forest), fh, separators=(",", ":"))


def load_forest(path) -> Forest:
    with open(path) as fh:
        return forest_from_dict(json.load(fh))
