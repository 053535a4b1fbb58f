"""Overall-survival regression: bagged variance-reduction trees plus the
evaluation suite (3-class accuracy, squared-error statistics, Spearman).

The forest is grown from scratch so that its structure is fully pinned:
thresholds are midpoints of adjacent sorted feature values, leaves store
the mean target of their samples, and every tree draws its bootstrap and
feature subsets from a seed derived as (seed + tree index). Identical
seeds give structurally identical forests.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

SHORT_DAYS = 300   # below: short survivor
LONG_DAYS = 450    # at or above: long survivor
SURVIVAL_CLASSES = ("short", "mid", "long")


class SurvivalError(ValueError):
    pass


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 2
    features_per_split: int | None = None  # None -> ceil(n_features / 3)
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise SurvivalError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise SurvivalError("min_samples_leaf must be >= 1")

    def resolved_features_per_split(self, n_features: int) -> int:
        k = self.features_per_split
        if k is None:
            k = math.ceil(n_features / 3)
        if not 1 <= k <= n_features:
            raise SurvivalError(
                f"features_per_split {k} outside [1, {n_features}]")
        return k


@dataclass(frozen=True)
class TreeNode:
    """Internal: (feature, threshold, children); leaf: value only."""

    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    def predict_one(self, x) -> float:
        node = self
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.value


def _best_split(X, y, feature_ids, min_leaf):
    """Highest variance-reduction split over the candidate features.

    Candidate thresholds are midpoints between adjacent distinct sorted
    values. Returns (feature, threshold, reduction) or None. Ties keep the
    first candidate in feature-iteration order, for determinism.
    """
    n = len(y)
    total = y.sum()
    total_sq = (y * y).sum()
    parent_sse = total_sq - total * total / n
    best = None
    for f in feature_ids:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        # split after position i: left = [0..i], right = (i..n)
        i = np.arange(min_leaf - 1, n - min_leaf)
        if i.size == 0:
            continue
        valid = xs[i] != xs[i + 1]
        if not valid.any():
            continue
        i = i[valid]
        nl = i + 1.0
        nr = n - nl
        sse_l = csq[i] - csum[i] * csum[i] / nl
        rs, rq = total - csum[i], total_sq - csq[i]
        sse_r = rq - rs * rs / nr
        reduction = parent_sse - sse_l - sse_r
        j = int(reduction.argmax())
        if best is None or reduction[j] > best[2]:
            pos = int(i[j])
            best = (f, (xs[pos] + xs[pos + 1]) / 2.0, float(reduction[j]))
    return best


def _grow(X, y, cfg: ForestConfig, k: int, rng, depth: int) -> TreeNode:
    n = len(y)
    leaf = TreeNode(value=float(y.mean()))
    if n < 2 * cfg.min_samples_leaf:
        return leaf
    if cfg.max_depth is not None and depth >= cfg.max_depth:
        return leaf
    if np.all(y == y[0]):
        return leaf
    feature_ids = rng.choice(X.shape[1], size=k, replace=False)
    split = _best_split(X, y, feature_ids, cfg.min_samples_leaf)
    if split is None or split[2] <= 0:
        return leaf
    f, thr, _ = split
    go_left = X[:, f] <= thr
    return TreeNode(
        feature=int(f),
        threshold=float(thr),
        left=_grow(X[go_left], y[go_left], cfg, k, rng, depth + 1),
        right=_grow(X[~go_left], y[~go_left], cfg, k, rng, depth + 1),
    )


@dataclass(frozen=True)
class Forest:
    trees: tuple
    config: ForestConfig
    n_features: int

    def predict_one(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_features,):
            raise SurvivalError(
                f"expected {self.n_features} features, got shape {x.shape}")
        return float(np.mean([t.predict_one(x) for t in self.trees]))

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.array([self.predict_one(row) for row in X])


def fit_forest(X, y, cfg: ForestConfig = ForestConfig()) -> Forest:
    """Grow cfg.n_trees trees on seeded bootstrap resamples of (X, y)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise SurvivalError(f"bad training shapes X{X.shape}, y{y.shape}")
    if len(y) < 2:
        raise SurvivalError("need at least 2 training samples")
    if len(y) < cfg.min_samples_leaf:
        raise SurvivalError("fewer samples than min_samples_leaf")
    if np.isnan(X).any() or np.isnan(y).any():
        raise SurvivalError("missing values in training data")
    k = cfg.resolved_features_per_split(X.shape[1])
    trees = []
    for t in range(cfg.n_trees):
        rng = np.random.default_rng(cfg.seed + t)
        if cfg.bootstrap:
            idx = rng.integers(0, len(y), size=len(y))
            Xt, yt = X[idx], y[idx]
        else:
            Xt, yt = X, y
        trees.append(_grow(Xt, yt, cfg, k, rng, 0))
    return Forest(tuple(trees), cfg, X.shape[1])


def predict_days(forest: Forest, features) -> float:
    return forest.predict_one(np.asarray(features, dtype=np.float64))


def classify_days(days: float, short_days: float = SHORT_DAYS,
                  long_days: float = LONG_DAYS) -> str:
    """short below short_days, long at/above long_days, mid between."""
    if days < 0:
        raise SurvivalError(f"negative survival days {days}")
    if days < short_days:
        return "short"
    if days < long_days:
        return "mid"
    return "long"


# -- evaluation ---------------------------------------------------------------

def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_r(a, b) -> float:
    """Pearson correlation of average ranks (ties averaged)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise SurvivalError("spearman needs two equal-length vectors")
    ra, rb = _average_ranks(a), _average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    if denom == 0:
        return 0.0
    return float((ra * rb).sum() / denom)


def evaluate(pred_days, true_days, short_days: float = SHORT_DAYS,
             long_days: float = LONG_DAYS) -> dict:
    """Accuracy over 3 classes plus MSE / medianSE / stdSE / SpearmanR."""
    pred = np.asarray(pred_days, dtype=np.float64)
    true = np.asarray(true_days, dtype=np.float64)
    if pred.shape != true.shape:
        raise SurvivalError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size < 2:
        raise SurvivalError("need at least 2 cases to evaluate")
    pc = [classify_days(d, short_days, long_days) for d in pred]
    tc = [classify_days(d, short_days, long_days) for d in true]
    se = (pred - true) ** 2
    return {
        "accuracy": float(np.mean([p == t for p, t in zip(pc, tc)])),
        "mse": float(se.mean()),
        "median_se": float(np.median(se)),
        "std_se": float(se.std()),
        "spearman_r": spearman_r(pred, true),
    }


def fold_indices(n: int, k: int, seed: int) -> list:
    """Seeded shuffle split into k near-equal folds (first n%k get the extra)."""
    if k > n:
        raise SurvivalError(f"cannot make {k} folds from {n} samples")
    if k < 2:
        raise SurvivalError("need k >= 2 folds")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(np.sort(perm[start:start + size]))
        start += size
    return folds


def cross_validate(X, y, k: int = 5, cfg: ForestConfig = ForestConfig(),
                   seed: int = 0, short_days: float = SHORT_DAYS,
                   long_days: float = LONG_DAYS) -> dict:
    """k-fold CV; returns per-fold metrics, pooled metrics over all held-out
    predictions, and the held-out predictions themselves (training order)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    folds = fold_indices(len(y), k, seed)
    held_out = np.full(len(y), np.nan)
    per_fold = []
    for i, test_idx in enumerate(folds):
        train_mask = np.ones(len(y), dtype=bool)
        train_mask[test_idx] = False
        forest = fit_forest(X[train_mask], y[train_mask], cfg)
        preds = forest.predict(X[test_idx])
        held_out[test_idx] = preds
        # singleton folds still pool; their own metric row is undefined
        if len(test_idx) >= 2:
            per_fold.append(evaluate(preds, y[test_idx], short_days, long_days))
        else:
            per_fold.append(None)
    pooled = evaluate(held_out, y, short_days, long_days)
    return {"per_fold": per_fold, "pooled": pooled, "predictions": held_out,
            "fold_sizes": [len(f) for f in folds]}


# -- serialization ------------------------------------------------------------

def _node_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"value": node.value}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(d: dict) -> TreeNode:
    if "value" in d:
        return TreeNode(value=float(d["value"]))
    return TreeNode(
        feature=int(d["feature"]),
        threshold=float(d["threshold"]),
        left=_node_from_dict(d["left"]),
        right=_node_from_dict(d["right"]),
    )


def save_forest(forest: Forest, path) -> None:
    doc = {
        "config": asdict(forest.config),
        "n_features": forest.n_features,
        "trees": [_node_to_dict(t) for t in forest.trees],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_forest(path) -> Forest:
    with open(path) as f:
        doc = json.load(f)
    cfg = ForestConfig(**doc["config"])
    trees = tuple(_node_from_dict(t) for t in doc["trees"])
    return Forest(trees, cfg, int(doc["n_features"]))
