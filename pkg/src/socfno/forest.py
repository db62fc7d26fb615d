"""Pixelwise random-forest regression baseline.

Every pixel is one training row: six band values in, one target value
out. Trees are grown CART-style, choosing at each node the (feature,
threshold) pair that minimizes the summed within-child squared deviation
(variance criterion); candidate thresholds are midpoints between
consecutive distinct sorted feature values. An absolute-deviation
criterion with median leaves exists behind a config switch for
exploration; it is quadratic in node size and not meant for large fits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

__all__ = [
    "ForestConfig",
    "Forest",
    "fit_forest",
    "predict_forest",
    "save_forest",
    "load_forest",
    "rasters_to_pixels",
    "subsample_pixels",
    "FOREST_FORMAT",
]

FOREST_FORMAT = "socfno-forest"
PIXEL_CAP = 2_000_000


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 10
    max_depth: int = 10
    min_samples_leaf: int = 5
    bootstrap: bool = True
    criterion: str = "variance"
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("forest sizes must be positive")
        if self.criterion not in ("variance", "mae"):
            raise ValueError(f"unknown criterion '{self.criterion}'")


def _leaf_value(y, criterion):
    return float(np.median(y)) if criterion == "mae" else float(y.mean())


def _node_cost(y, criterion):
    if criterion == "mae":
        return float(np.abs(y - np.median(y)).sum())
    return float(((y - y.mean()) ** 2).sum())


def _variance_split(xs, ys, min_leaf):
    """Best boundary index and cost via prefix sums; None when no candidate."""
    n = len(ys)
    s1 = np.cumsum(ys)
    s2 = np.cumsum(ys * ys)
    k = np.arange(1, n)
    valid = (xs[1:] != xs[:-1]) & (k >= min_leaf) & (n - k >= min_leaf)
    if not valid.any():
        return None
    left = s2[:-1] - s1[:-1] ** 2 / k
    right = (s2[-1] - s2[:-1]) - (s1[-1] - s1[:-1]) ** 2 / (n - k)
    cost = np.where(valid, left + right, np.inf)
    best = int(np.argmin(cost))
    return best + 1, float(cost[best])


def _mae_split(xs, ys, min_leaf):
    n = len(ys)
    best = None
    for k in range(min_leaf, n - min_leaf + 1):
        if xs[k - 1] == xs[k]:
            continue
        cost = _node_cost(ys[:k], "mae") + _node_cost(ys[k:], "mae")
        if best is None or cost < best[1]:
            best = (k, cost)
    return best


def _best_split(X, y, min_leaf, criterion):
    """Deterministic argmin over features then thresholds."""
    best = None
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        found = (
            _mae_split(xs, ys, min_leaf)
            if criterion == "mae"
            else _variance_split(xs, ys, min_leaf)
        )
        if found is None:
            continue
        k, cost = found
        if best is None or cost < best[0]:
            threshold = 0.5 * (xs[k - 1] + xs[k])
            best = (cost, f, threshold)
    return best


def _grow_tree(X, y, cfg):
    """Returns parallel node arrays: feature (-1 for leaves), threshold,
    left/right child indices, and leaf value."""
    feature, threshold, left, right, value = [], [], [], [], []

    def add_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def build(rows, depth):
        idx = add_node()
        ys = y[rows]
        if (
            depth >= cfg.max_depth
            or len(rows) < 2 * cfg.min_samples_leaf
            or np.all(ys == ys[0])
        ):
            value[idx] = _leaf_value(ys, cfg.criterion)
            return idx
        found = _best_split(X[rows], ys, cfg.min_samples_leaf, cfg.criterion)
        if found is None:
            value[idx] = _leaf_value(ys, cfg.criterion)
            return idx
        _, f, thr = found
        go_left = X[rows, f] <= thr
        feature[idx] = f
        threshold[idx] = thr
        left[idx] = build(rows[go_left], depth + 1)
        right[idx] = build(rows[~go_left], depth + 1)
        return idx

    build(np.arange(len(y)), 0)
    return {
        "feature": np.asarray(feature, dtype=np.int64),
        "threshold": np.asarray(threshold, dtype=np.float64),
        "left": np.asarray(left, dtype=np.int64),
        "right": np.asarray(right, dtype=np.int64),
        "value": np.asarray(value, dtype=np.float64),
    }


def _tree_predict(tree, X):
    node = np.zeros(len(X), dtype=np.int64)
    feature = tree["feature"]
    active = feature[node] >= 0
    while active.any():
        cur = node[active]
        f = feature[cur]
        go_left = X[active, f] <= tree["threshold"][cur]
        node[active] = np.where(go_left, tree["left"][cur], tree["right"][cur])
        active = feature[node] >= 0
    return tree["value"][node]


@dataclass
class Forest:
    config: ForestConfig
    trees: list
    n_features: int


def fit_forest(X, y, cfg):
    """Fit a forest on pixel rows ``X [n, f]`` and targets ``y [n]``.

    Each tree sees a bootstrap resample (when enabled) drawn from a
    per-tree rng, so fits are reproducible from ``cfg.seed`` alone.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
        raise ValueError("expected X [n, features] and matching y [n]")
    if len(y) < 2 * cfg.min_samples_leaf:
        raise ValueError(
            f"need at least {2 * cfg.min_samples_leaf} rows, got {len(y)}"
        )
    trees = []
    for t in range(cfg.n_trees):
        if cfg.bootstrap:
            rng = np.random.default_rng((cfg.seed, t))
            rows = rng.integers(0, len(y), size=len(y))
            trees.append(_grow_tree(X[rows], y[rows], cfg))
        else:
            trees.append(_grow_tree(X, y, cfg))
    return Forest(config=cfg, trees=trees, n_features=X.shape[1])


def predict_forest(forest, raster):
    """Predict a ``[1, H, W]`` map from a ``[C, H, W]`` raster."""
    arr = np.asarray(raster, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != forest.n_features:
        raise ValueError(
            f"expected [{forest.n_features}, H, W] raster, got {arr.shape}"
        )
    _, h, w = arr.shape
    X = arr.reshape(forest.n_features, -1).T
    acc = np.zeros(len(X))
    for tree in forest.trees:
        acc += _tree_predict(tree, X)
    return (acc / len(forest.trees)).reshape(1, h, w)


def rasters_to_pixels(samples):
    """Stack samples into pixel rows: ``(X [n_px, C], y [n_px])``."""
    xs, ys = [], []
    for s in samples:
        c = s.bands.shape[0]
        xs.append(s.bands.reshape(c, -1).T.astype(np.float64))
        ys.append(s.target.reshape(-1).astype(np.float64))
    return np.concatenate(xs), np.concatenate(ys)


def subsample_pixels(X, y, cap=PIXEL_CAP, seed=0):
    """Uniform pixel subsample when the pool exceeds ``cap`` rows."""
    if len(y) <= cap:
        return X, y
    rows = np.random.default_rng((seed, len(y))).choice(
        len(y), size=cap, replace=False
    )
    return X[rows], y[rows]


def save_forest(forest, path, extra=None):
    """Write the forest as one JSON document."""
    doc = {
        "format": FOREST_FORMAT,
        "version": 1,
        "config": asdict(forest.config),
        "n_features": forest.n_features,
        "extra": {} if extra is None else extra,
        "trees": [
            {key: tree[key].tolist() for key in
             ("feature", "threshold", "left", "right", "value")}
            for tree in forest.trees
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_forest(path):
    """Read a forest written by :func:`save_forest`; returns ``(forest, extra)``."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != FOREST_FORMAT:
        raise ValueError(f"{path}: not a {FOREST_FORMAT} file")
    trees = [
        {
            "feature": np.asarray(t["feature"], dtype=np.int64),
            "threshold": np.asarray(t["threshold"], dtype=np.float64),
            "left": np.asarray(t["left"], dtype=np.int64),
            "right": np.asarray(t["right"], dtype=np.int64),
            "value": np.asarray(t["value"], dtype=np.float64),
        }
        for t in doc["trees"]
    ]
    forest = Forest(
        config=ForestConfig(**doc["config"]),
        trees=trees,
        n_features=int(doc["n_features"]),
    )
    return forest, doc.get("extra", {})
