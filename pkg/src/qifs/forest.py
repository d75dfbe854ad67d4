"""Random forest classifier and its evaluation harness.

Trees are CART with Gini impurity, grown on bootstrap resamples. The node
builder is compiled with numba and carries its own splitmix64 stream, so a
(matrix, mask, config) triple fully determines every tree regardless of
thread scheduling.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numba
import numpy as np

from .errors import (
    ClassTooSmall,
    DegenerateOutcome,
    EmptyLabels,
    InvalidConfig,
    LengthMismatch,
    MaskMismatch,
    NoFeaturesSelected,
    SingleClass,
)
from .features import FeatureMatrix


def gini(labels) -> float:
    """Gini impurity ``1 - p0**2 - p1**2`` of a binary label list."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyLabels("gini of an empty label set")
    p1 = float(np.count_nonzero(labels)) / labels.size
    p0 = 1.0 - p1
    return 1.0 - p0 * p0 - p1 * p1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    features_per_split: Union[str, int] = "sqrt"
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise InvalidConfig("n_trees must be positive")
        if self.max_depth is not None and self.max_depth < 1:
            raise InvalidConfig("max_depth must be positive or None")
        if self.min_samples_split < 2:
            raise InvalidConfig("min_samples_split must be >= 2")
        if isinstance(self.features_per_split, str):
            if self.features_per_split != "sqrt":
                raise InvalidConfig(f"features_per_split must be 'sqrt' or an int, got {self.features_per_split!r}")
        elif self.features_per_split < 1:
            raise InvalidConfig("features_per_split must be positive")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must be an unsigned 64-bit integer")

    def split_size(self, n_active: int) -> int:
        if self.features_per_split == "sqrt":
            return max(1, int(math.sqrt(n_active)))
        if self.features_per_split > n_active:
            raise InvalidConfig(f"features_per_split={self.features_per_split} exceeds {n_active} active features")
        return int(self.features_per_split)

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_samples_split": self.min_samples_split,
            "features_per_split": self.features_per_split,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# Tree kernel

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@numba.njit(cache=True, nogil=True)
def _next_u64(state):
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, nogil=True)
def _below(state, bound):
    u = (_next_u64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)
    r = int(u * bound)
    return min(r, bound - 1)


@numba.njit(cache=True, nogil=True)
def _node_gini(pos, n):
    p1 = pos / n
    p0 = 1.0 - p1
    return 1.0 - p0 * p0 - p1 * p1


@numba.njit(cache=True, nogil=True)
def _grow_tree(X, y, samples, features, k, max_depth, min_split, rng_state):
    s = samples.shape[0]
    cap = max(1, 2 * s - 1)
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    importance = np.zeros(X.shape[1])

    samples = samples.copy()
    scratch = np.empty(s, dtype=samples.dtype)
    perm = features.copy()
    nf = perm.shape[0]

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0], st_start[0], st_end[0], st_depth[0] = 0, 0, s, 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]
        n = end - start
        pos = 0
        for t in range(start, end):
            pos += y[samples[t]]
        value[node] = pos / n
        if pos == 0 or pos == n or n < min_split or (max_depth >= 0 and depth >= max_depth):
            continue
        g = _node_gini(pos, n)

        best_gain = -1.0
        best_f = -1
        best_t = 0.0
        best_nl = 0
        best_pl = 0
        visited = 0
        i = 0
        vals = np.empty(n)
        while i < nf and visited < k:
            j = i + _below(rng_state, nf - i)
            tmp = perm[i]
            perm[i] = perm[j]
            perm[j] = tmp
            f = perm[i]
            i += 1
            for t in range(n):
                vals[t] = X[samples[start + t], f]
            order = np.argsort(vals, kind="mergesort")
            if vals[order[0]] == vals[order[n - 1]]:
                continue
            visited += 1
            left_pos = 0
            for t in range(n - 1):
                left_pos += y[samples[start + order[t]]]
                a = vals[order[t]]
                b = vals[order[t + 1]]
                if a == b:
                    continue
                nl = t + 1
                nr = n - nl
                gain = g - (nl * _node_gini(left_pos, nl) + nr * _node_gini(pos - left_pos, nr)) / n
                if gain > best_gain or (gain == best_gain and f < best_f):
                    thr = (a + b) / 2.0
                    if thr >= b:
                        thr = a
                    best_gain = gain
                    best_f = f
                    best_t = thr
                    best_nl = nl
                    best_pl = left_pos
        if best_f < 0:
            continue

        lo = start
        hi = end
        for t in range(start, end):
            idx = samples[t]
            if X[idx, best_f] <= best_t:
                scratch[lo] = idx
                lo += 1
        for t in range(start, end):
            idx = samples[t]
            if X[idx, best_f] > best_t:
                scratch[lo] = idx
                lo += 1
        for t in range(start, end):
            samples[t] = scratch[t]
        mid = start + best_nl

        nr = n - best_nl
        importance[best_f] += (
            n * g - best_nl * _node_gini(best_pl, best_nl) - nr * _node_gini(pos - best_pl, nr)
        )
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[top], st_start[top], st_end[top], st_depth[top] = n_nodes + 1, mid, hi, depth + 1
        top += 1
        st_node[top], st_start[top], st_end[top], st_depth[top] = n_nodes, start, mid, depth + 1
        top += 1
        n_nodes += 2

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        importance / s,
    )


@numba.njit(cache=True, nogil=True)
def _tree_votes(feature, threshold, left, right, value, X):
    m = X.shape[0]
    out = np.zeros(m, dtype=np.int64)
    for r in range(m):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = 1 if value[node] > 0.5 else 0
    return out


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    importance: np.ndarray

    @property
    def node_count(self) -> int:
        return self.feature.shape[0]

    def votes(self, X: np.ndarray) -> np.ndarray:
        return _tree_votes(self.feature, self.threshold, self.left, self.right, self.value, X)


@dataclass
class ForestModel:
    trees: List[Tree]
    mask: np.ndarray
    names: Tuple[str, ...]
    config: ForestConfig
    train_time_seconds: float

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.mask)


def _tree_seed(seed: int, t: int):
    return np.random.SeedSequence([seed, t])


def _fit_arrays(X, y, mask, names, cfg: ForestConfig, threads: int = 1) -> ForestModel:
    mask = np.asarray(mask, dtype=np.int8)
    if mask.shape[0] != X.shape[1]:
        raise MaskMismatch(f"mask has {mask.shape[0]} bits for {X.shape[1]} columns")
    active = np.flatnonzero(mask).astype(np.int64)
    if active.size == 0:
        raise NoFeaturesSelected("mask selects no features")
    y = np.ascontiguousarray(y, dtype=np.int64)
    if y.size == 0 or y.min() == y.max():
        raise DegenerateOutcome("training outcomes contain a single class")
    X = np.ascontiguousarray(X, dtype=np.float64)
    k = cfg.split_size(active.size)
    max_depth = -1 if cfg.max_depth is None else cfg.max_depth
    m = X.shape[0]

    def grow(t):
        rng = np.random.default_rng(_tree_seed(cfg.seed, t))
        if cfg.bootstrap:
            samples = rng.integers(0, m, size=m).astype(np.int64)
        else:
            samples = np.arange(m, dtype=np.int64)
        state = np.array([rng.integers(0, 2**64, dtype=np.uint64)], dtype=np.uint64)
        return Tree(*_grow_tree(X, y, samples, active, k, max_depth, cfg.min_samples_split, state))

    start = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(grow, range(cfg.n_trees)))
    else:
        trees = [grow(t) for t in range(cfg.n_trees)]
    elapsed = time.perf_counter() - start
    return ForestModel(trees, mask.copy(), tuple(names), cfg, elapsed)


def fit(matrix: FeatureMatrix, mask, cfg: ForestConfig = ForestConfig(), threads: int = 1) -> ForestModel:
    """Train a forest on the columns selected by ``mask``."""
    return _fit_arrays(matrix.X, matrix.outcomes, mask, matrix.names, cfg, threads)


def _check_mask(model: ForestModel, mask) -> None:
    mask = np.asarray(mask, dtype=np.int8)
    if mask.shape != model.mask.shape or np.any(mask != model.mask):
        raise MaskMismatch("mask differs from the training mask")


def predict_proba_rows(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Fraction of trees voting class 1, for every row of ``X``."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    if X.shape[1] != model.mask.shape[0]:
        raise MaskMismatch(f"rows have {X.shape[1]} columns, model expects {model.mask.shape[0]}")
    votes = np.zeros(X.shape[0], dtype=np.int64)
    for tree in model.trees:
        votes += tree.votes(X)
    return votes / len(model.trees)


def predict_proba(model: ForestModel, row, mask) -> float:
    _check_mask(model, mask)
    return float(predict_proba_rows(model, np.asarray(row, dtype=np.float64)[None, :])[0])


def feature_importances(model: ForestModel) -> List[Tuple[str, float]]:
    """Mean impurity decrease per active feature, normalised to sum to one."""
    active = model.active
    total = np.zeros(active.size)
    for tree in model.trees:
        imp = tree.importance[active]
        s = imp.sum()
        if s > 0:
            total += imp / s
    if total.sum() > 0:
        total /= total.sum()
    else:
        total[:] = 1.0 / active.size
    order = sorted(range(active.size), key=lambda j: (-total[j], active[j]))
    return [(model.names[active[j]], float(total[j])) for j in order]


# ---------------------------------------------------------------------------
# Metrics


def _check_binary(scores, outcomes):
    scores = np.asarray(scores, dtype=np.float64)
    outcomes = np.asarray(outcomes).astype(np.int64)
    if scores.shape != outcomes.shape or scores.ndim != 1:
        raise LengthMismatch("scores and outcomes differ in shape")
    n_pos = int(np.count_nonzero(outcomes))
    if n_pos == 0 or n_pos == outcomes.size:
        raise SingleClass("ROC needs both classes present")
    return scores, outcomes, n_pos


def roc_auc(scores, outcomes) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 * P(tie)."""
    scores, outcomes, n_pos = _check_binary(scores, outcomes)
    n_neg = outcomes.size - n_pos
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    starts = np.concatenate(([0], np.flatnonzero(s[1:] != s[:-1]) + 1))
    ends = np.concatenate((starts[1:], [s.size]))
    ranks = np.empty(s.size)
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    u = ranks[outcomes == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, outcomes):
    """(fpr, tpr, thresholds), one point per distinct score, highest threshold first.

    A point counts scores ``>= threshold`` as positive.
    """
    scores, outcomes, n_pos = _check_binary(scores, outcomes)
    n_neg = outcomes.size - n_pos
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    o = outcomes[order]
    last = np.concatenate((np.flatnonzero(s[1:] != s[:-1]), [s.size - 1]))
    tp = np.cumsum(o)[last]
    fp = np.cumsum(1 - o)[last]
    return fp / n_neg, tp / n_pos, s[last]


def trapezoid_auc(fpr, tpr) -> float:
    x = np.concatenate(([0.0], fpr))
    y = np.concatenate(([0.0], tpr))
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def confusion_matrix(predicted, outcomes) -> np.ndarray:
    predicted = np.asarray(predicted).astype(bool)
    actual = np.asarray(outcomes).astype(bool)
    tn = int(np.sum(~predicted & ~actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    tp = int(np.sum(predicted & actual))
    return np.array([[tn, fp], [fn, tp]], dtype=np.int64)


@dataclass
class Metrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    auc: float
    confusion: np.ndarray
    train_time_seconds: float = 0.0
    scores: Optional[np.ndarray] = field(default=None, repr=False)
    outcomes: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def from_scores(cls, scores, outcomes, threshold=0.5, train_time_seconds=0.0) -> "Metrics":
        scores = np.asarray(scores, dtype=np.float64)
        outcomes = np.asarray(outcomes).astype(np.int64)
        cm = confusion_matrix(scores >= threshold, outcomes)
        (tn, fp), (fn, tp) = cm
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(
            precision=float(precision),
            recall=float(recall),
            f1=float(f1),
            accuracy=float((tp + tn) / cm.sum()),
            auc=roc_auc(scores, outcomes),
            confusion=cm,
            train_time_seconds=train_time_seconds,
            scores=scores,
            outcomes=outcomes,
        )

    def to_json(self, target_class: str, mask_source: str, n_features: int) -> dict:
        return {
            "target_class": str(target_class),
            "mask_source": mask_source,
            "n_features": int(n_features),
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "auc": self.auc,
            "confusion": self.confusion.tolist(),
            "train_time_seconds": self.train_time_seconds,
        }


# ---------------------------------------------------------------------------
# Cross-validation


def stratified_kfold(outcomes, k: int, seed: int = 0) -> List[np.ndarray]:
    """Split indices into ``k`` disjoint folds with balanced class counts.

    Each class is shuffled and dealt round-robin; negatives continue where
    the positives stopped so fold sizes also differ by at most one.
    """
    outcomes = np.asarray(outcomes).astype(np.int64)
    if k < 2:
        raise InvalidConfig("k must be >= 2")
    pos = np.flatnonzero(outcomes == 1)
    neg = np.flatnonzero(outcomes != 1)
    if pos.size < k or neg.size < k:
        raise ClassTooSmall(f"each class needs >= {k} members, got {pos.size} positive / {neg.size} negative")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF01D]))
    pos = rng.permutation(pos)
    neg = rng.permutation(neg)
    fold_of = np.empty(outcomes.size, dtype=np.int64)
    fold_of[pos] = np.arange(pos.size) % k
    fold_of[neg] = (np.arange(neg.size) + pos.size) % k
    return [np.flatnonzero(fold_of == f) for f in range(k)]


def cross_validate(
    matrix: FeatureMatrix, mask, cfg: ForestConfig = ForestConfig(), k: int = 10, threads: int = 1
) -> Metrics:
    """Pooled out-of-fold metrics; training time is summed over folds."""
    mask = np.asarray(mask, dtype=np.int8)
    if mask.shape[0] != matrix.n:
        raise MaskMismatch(f"mask has {mask.shape[0]} bits for {matrix.n} columns")
    if not mask.any():
        raise NoFeaturesSelected("mask selects no features")
    folds = stratified_kfold(matrix.outcomes, k, cfg.seed)
    scores = np.zeros(matrix.m)
    train_time = 0.0
    for held_out in folds:
        train = np.setdiff1d(np.arange(matrix.m), held_out, assume_unique=True)
        model = _fit_arrays(matrix.X[train], matrix.outcomes[train], mask, matrix.names, cfg, threads)
        train_time += model.train_time_seconds
        scores[held_out] = predict_proba_rows(model, matrix.X[held_out])
    return Metrics.from_scores(scores, matrix.outcomes, train_time_seconds=train_time)
