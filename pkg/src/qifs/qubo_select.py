"""QUBO-based feature selection.

The objective trades relevance against redundancy::

    f(x) = -alpha * sum_j x_j |rho_oj| + (1 - alpha) * sum_{j != k} x_j x_k |rho_jk|

with Spearman correlations ``rho_oj`` (feature vs outcome) and ``rho_jk``
(feature vs feature). ``Q`` is built so that ``x @ Q @ x == f(x)`` and is
minimised directly, either by simulated annealing or, for small ``n``, by
exhaustive enumeration.
"""
from __future__ import annotations

import enum
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence

import numba
import numpy as np

from .errors import (
    AlphaOutOfRange,
    InvalidConfig,
    LengthMismatch,
    TooFewSamples,
    TooManyFeatures,
    UnknownFeatureName,
)
from .features import FEATURE_NAMES, FeatureMatrix

EXHAUSTIVE_MAX_FEATURES = 24
DEFAULT_ALPHA = 0.5
BUILTIN_SUBSETS = {
    "sa23": "sa_23.txt",
    "qa9": "qa_9.txt",
    "qa_bqm7": "qa_bqm_7.txt",
}


class Solver(str, enum.Enum):
    SA = "SA"
    EXHAUSTIVE = "Exhaustive"
    NAMED_SUBSET = "NamedSubset"


# ---------------------------------------------------------------------------
# Spearman correlation


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the positions they span."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    starts = np.concatenate(([0], np.flatnonzero(xs[1:] != xs[:-1]) + 1))
    ends = np.concatenate((starts[1:], [n]))
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties.

    Returns 0.0 when either input is constant.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"lengths differ: {x.shape} vs {y.shape}")
    if x.shape[0] < 2:
        raise TooFewSamples("spearman needs at least two samples")
    rx = average_ranks(x)
    ry = average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    sxx = float(rx @ rx)
    syy = float(ry @ ry)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    r = float(rx @ ry) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


@dataclass(frozen=True)
class CorrelationSet:
    rho_outcome: np.ndarray
    rho_pairs: np.ndarray

    @property
    def n(self) -> int:
        return self.rho_outcome.shape[0]


def correlations(matrix: FeatureMatrix) -> CorrelationSet:
    """Spearman correlation of every column with the outcome and with each other."""
    if matrix.m < 2:
        raise TooFewSamples("need at least two rows")
    ranks = np.column_stack(
        [average_ranks(matrix.X[:, j]) for j in range(matrix.n)] + [average_ranks(matrix.outcomes)]
    )
    ranks -= ranks.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", ranks, ranks))
    safe = np.where(norms > 0, norms, 1.0)
    cov = ranks.T @ ranks
    corr = cov / np.outer(safe, safe)
    corr[norms == 0, :] = 0.0
    corr[:, norms == 0] = 0.0
    corr = np.clip(corr, -1.0, 1.0)
    upper = np.triu(corr, 1)
    corr = upper + upper.T
    n = matrix.n
    pairs = corr[:n, :n].copy()
    np.fill_diagonal(pairs, 1.0)
    return CorrelationSet(rho_outcome=corr[:n, n].copy(), rho_pairs=pairs)


# ---------------------------------------------------------------------------
# QUBO


@dataclass(frozen=True)
class QuboInstance:
    q: np.ndarray
    alpha: float

    @property
    def n(self) -> int:
        return self.q.shape[0]


def build_qubo(corr: CorrelationSet, alpha: float = DEFAULT_ALPHA) -> QuboInstance:
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {alpha}")
    q = (1.0 - alpha) * np.abs(corr.rho_pairs)
    np.fill_diagonal(q, -alpha * np.abs(corr.rho_outcome))
    return QuboInstance(q=q, alpha=float(alpha))


def as_mask(bits, n: Optional[int] = None) -> np.ndarray:
    mask = np.asarray(bits, dtype=np.int8).ravel()
    if n is not None and mask.shape[0] != n:
        raise LengthMismatch(f"mask has {mask.shape[0]} bits, expected {n}")
    if np.any((mask != 0) & (mask != 1)):
        raise ValueError("mask bits must be 0 or 1")
    return mask


def energy(qubo: QuboInstance, mask) -> float:
    """``x @ Q @ x`` for a 0/1 mask."""
    mask = as_mask(mask, qubo.n)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return 0.0
    return float(qubo.q[np.ix_(idx, idx)].sum())


def flip_delta(qubo: QuboInstance, mask, i: int) -> float:
    """Energy change from flipping bit ``i``; O(n)."""
    q = qubo.q
    x = as_mask(mask, qubo.n)
    field_i = float(q[i] @ x) - q[i, i] * x[i]
    d = q[i, i] + 2.0 * field_i
    return -d if x[i] else d


# ---------------------------------------------------------------------------
# Results


@dataclass(frozen=True)
class AnnealSchedule:
    beta_start: float = 0.1
    beta_end: float = 10.0
    sweeps: int = 1000
    restarts: int = 8
    seed: int = 0

    def __post_init__(self):
        if not (self.beta_start > 0 and self.beta_end >= self.beta_start):
            raise InvalidConfig(f"need 0 < beta_start <= beta_end, got {self.beta_start}, {self.beta_end}")
        if self.sweeps < 1 or self.restarts < 1:
            raise InvalidConfig("sweeps and restarts must be positive")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must be an unsigned 64-bit integer")

    def betas(self) -> np.ndarray:
        return np.geomspace(self.beta_start, self.beta_end, self.sweeps)

    def to_dict(self) -> dict:
        return {
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "sweeps": self.sweeps,
            "restarts": self.restarts,
        }


@dataclass
class SelectionResult:
    mask: np.ndarray
    energy: float
    selected_names: List[str]
    wall_time_seconds: float
    solver: Solver
    alpha: float = DEFAULT_ALPHA
    schedule: Optional[AnnealSchedule] = None

    @property
    def n_selected(self) -> int:
        return int(self.mask.sum())

    def to_json(self) -> dict:
        schedule = self.schedule or AnnealSchedule()
        return {
            "solver": self.solver.value,
            "alpha": self.alpha,
            "seed": schedule.seed,
            "schedule": schedule.to_dict(),
            "energy": self.energy,
            "wall_time_seconds": self.wall_time_seconds,
            "selected": list(self.selected_names),
            "mask": "".join(str(int(b)) for b in self.mask),
        }


def _result(qubo, mask, names, elapsed, solver, schedule=None) -> SelectionResult:
    names = list(names) if names is not None else [f"x{j}" for j in range(qubo.n)]
    if len(names) != qubo.n:
        raise LengthMismatch(f"{len(names)} names for {qubo.n} variables")
    return SelectionResult(
        mask=mask,
        energy=energy(qubo, mask),
        selected_names=[name for name, bit in zip(names, mask) if bit],
        wall_time_seconds=elapsed,
        solver=solver,
        alpha=qubo.alpha,
        schedule=schedule,
    )


# ---------------------------------------------------------------------------
# Exhaustive oracle


@numba.njit(cache=True, nogil=True)
def _gray_walk(q, threshold, collect, out):
    """Walk all 2**n masks in Gray-code order.

    Returns the minimum running energy; when ``collect`` is set, also stores
    the integer masks whose energy is <= ``threshold`` into ``out``.
    """
    n = q.shape[0]
    x = np.zeros(n, dtype=np.int8)
    h = np.zeros(n)
    e = 0.0
    best = 0.0
    found = 0
    if collect and 0.0 <= threshold:
        if found < out.shape[0]:
            out[found] = 0
        found += 1
    code = 0
    for k in range(1, 1 << n):
        i = 0
        while not (k >> i) & 1:
            i += 1
        d = q[i, i] + 2.0 * h[i]
        if x[i]:
            e -= d
            x[i] = 0
            for j in range(n):
                if j != i:
                    h[j] -= q[j, i]
        else:
            e += d
            x[i] = 1
            for j in range(n):
                if j != i:
                    h[j] += q[j, i]
        code ^= 1 << i
        if e < best:
            best = e
        if collect and e <= threshold:
            if found < out.shape[0]:
                out[found] = code
            found += 1
    return best, found


def solve_exhaustive(qubo: QuboInstance, names: Optional[Sequence[str]] = None) -> SelectionResult:
    """Global minimum by enumerating every mask (``n <= 24``).

    Ties go to the smallest mask read as a little-endian integer. The walk
    uses incremental energies; every mask within a small tolerance of the
    walk's minimum is re-scored with :func:`energy` before choosing.
    """
    n = qubo.n
    if n > EXHAUSTIVE_MAX_FEATURES:
        raise TooManyFeatures(f"exhaustive search supports at most {EXHAUSTIVE_MAX_FEATURES} features, got {n}")
    q = np.ascontiguousarray(qubo.q, dtype=np.float64)
    start = time.perf_counter()
    if n == 0:
        return _result(qubo, np.zeros(0, dtype=np.int8), names, 0.0, Solver.EXHAUSTIVE)
    best, _ = _gray_walk(q, 0.0, False, np.zeros(1, dtype=np.int64))
    tol = 1e-9 * (1.0 + float(np.abs(q).sum()))
    cap = 1 << 16
    out = np.zeros(cap, dtype=np.int64)
    _, found = _gray_walk(q, best + tol, True, out)
    if found > cap:
        raise RuntimeError("too many near-optimal masks to disambiguate")
    bits = 1 << np.arange(n, dtype=np.int64)
    best_mask, best_e = None, math.inf
    for code in sorted(int(c) for c in out[:found]):
        mask = ((code & bits) != 0).astype(np.int8)
        e = energy(qubo, mask)
        if e < best_e:
            best_mask, best_e = mask, e
    elapsed = time.perf_counter() - start
    return _result(qubo, best_mask, names, elapsed, Solver.EXHAUSTIVE)


def mask_to_int(mask) -> int:
    return sum(int(b) << j for j, b in enumerate(mask))


# ---------------------------------------------------------------------------
# Simulated annealing


@numba.njit(cache=True, nogil=True)
def _anneal(q, betas, x0, uniforms):
    n = q.shape[0]
    x = x0.copy()
    h = np.zeros(n)
    for i in range(n):
        if x[i]:
            for j in range(n):
                if j != i:
                    h[j] += q[j, i]
    e = 0.0
    for i in range(n):
        if x[i]:
            e += q[i, i] + h[i]
    best = x.copy()
    best_e = e
    for s in range(betas.shape[0]):
        beta = betas[s]
        for i in range(n):
            d = q[i, i] + 2.0 * h[i]
            if x[i]:
                d = -d
            if d <= 0.0 or uniforms[s, i] < math.exp(-beta * d):
                if x[i]:
                    x[i] = 0
                    for j in range(n):
                        if j != i:
                            h[j] -= q[j, i]
                else:
                    x[i] = 1
                    for j in range(n):
                        if j != i:
                            h[j] += q[j, i]
                e += d
                if e < best_e:
                    best_e = e
                    best[:] = x
    # zero-temperature finish from the best mask: take strictly downhill
    # flips until none is left. Small weights never freeze at a finite beta.
    x[:] = best
    h[:] = 0.0
    for i in range(n):
        if x[i]:
            for j in range(n):
                if j != i:
                    h[j] += q[j, i]
    for _ in range(10 * n + 10):
        moved = False
        for i in range(n):
            d = q[i, i] + 2.0 * h[i]
            if x[i]:
                d = -d
            if d < 0.0:
                sign = -1.0 if x[i] else 1.0
                x[i] = 1 - x[i]
                for j in range(n):
                    if j != i:
                        h[j] += sign * q[j, i]
                moved = True
        if not moved:
            break
    return x


def restart_rng(seed: int, restart: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, restart]))


def solve_sa(
    qubo: QuboInstance,
    schedule: AnnealSchedule = AnnealSchedule(),
    names: Optional[Sequence[str]] = None,
    threads: int = 1,
) -> SelectionResult:
    """Single-flip Metropolis annealing over a geometric beta ramp.

    Each restart starts from a uniformly random mask drawn from its own
    substream of ``schedule.seed``; sweeps visit variables in index order.
    The lowest-energy mask of each restart is then polished by greedy
    downhill flips. The best restart wins, earliest restart on ties.
    """
    q = np.ascontiguousarray(qubo.q, dtype=np.float64)
    n = qubo.n
    betas = schedule.betas()

    def run(r):
        rng = restart_rng(schedule.seed, r)
        x0 = rng.integers(0, 2, size=n).astype(np.int8)
        uniforms = rng.random((schedule.sweeps, n))
        return _anneal(q, betas, x0, uniforms)

    start = time.perf_counter()
    if threads > 1 and schedule.restarts > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            masks = list(pool.map(run, range(schedule.restarts)))
    else:
        masks = [run(r) for r in range(schedule.restarts)]
    elapsed = time.perf_counter() - start
    energies = [energy(qubo, m) for m in masks]
    winner = int(np.argmin(energies))
    return _result(qubo, masks[winner], names, elapsed, Solver.SA, schedule)


# ---------------------------------------------------------------------------
# Named subsets


def load_named_subset(names: Sequence[str], canonical: Sequence[str] = FEATURE_NAMES) -> np.ndarray:
    canonical = list(canonical)
    index = {name: i for i, name in enumerate(canonical)}
    mask = np.zeros(len(canonical), dtype=np.int8)
    for name in names:
        if name not in index:
            raise UnknownFeatureName(f"unknown feature name {name!r}")
        mask[index[name]] = 1
    return mask


def read_subset_file(path) -> List[str]:
    """One feature name per line; blank lines and ``#`` comments are skipped."""
    text = Path(path).read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]


def builtin_subset(key: str) -> List[str]:
    try:
        filename = BUILTIN_SUBSETS[key]
    except KeyError:
        raise UnknownFeatureName(f"no built-in subset {key!r}; choose from {sorted(BUILTIN_SUBSETS)}") from None
    text = resources.files("qifs.subsets").joinpath(filename).read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")]


def resolve_subset(key_or_path: str) -> List[str]:
    """A built-in subset key or a path to a subset file."""
    if key_or_path in BUILTIN_SUBSETS:
        return builtin_subset(key_or_path)
    return read_subset_file(key_or_path)


def solve_named_subset(qubo: QuboInstance, subset: Sequence[str], names: Sequence[str]) -> SelectionResult:
    start = time.perf_counter()
    mask = load_named_subset(subset, names)
    elapsed = time.perf_counter() - start
    return _result(qubo, mask, names, elapsed, Solver.NAMED_SUBSET)


def select_features(
    matrix: FeatureMatrix,
    alpha: float = DEFAULT_ALPHA,
    solver: Solver = Solver.SA,
    schedule: AnnealSchedule = AnnealSchedule(),
    subset: Optional[Sequence[str]] = None,
    threads: int = 1,
) -> SelectionResult:
    """Correlations, QUBO and solver in one call."""
    qubo = build_qubo(correlations(matrix), alpha)
    solver = Solver(solver)
    if solver is Solver.SA:
        return solve_sa(qubo, schedule, matrix.names, threads=threads)
    if solver is Solver.EXHAUSTIVE:
        result = solve_exhaustive(qubo, matrix.names)
    else:
        if subset is None:
            raise InvalidConfig("named-subset solver needs a subset")
        result = solve_named_subset(qubo, subset, matrix.names)
    result.schedule = schedule
    return result
