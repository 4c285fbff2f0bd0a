"""MVRS stratification: direction, scores, partitions, allocation and draws.

Observations are ordered by ``(score, row index)``; the row index breaks ties
so every partition is a deterministic function of the scores. Strata are
contiguous blocks of that order (left-open, right-closed intervals in score).
Index sets are always returned in ascending row order, which makes a single
stratum draw bit-identical to an unstratified draw over the whole dataset.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .data import Dataset
from .errors import InvalidInput, RateOverflow
from .model import ETA_MAX, Family, score_matrix
from .sampling import Draw, SamplingPlan, pilot_inverse_hessian

logger = logging.getLogger(__name__)

POWER_TOL = 1e-10
POWER_MAX_ITER = 1000


# --------------------------------------------------------------------------
# direction and scores


@dataclass
class Direction:
    c: np.ndarray  # u^T M0, applied to raw scores
    u: np.ndarray  # unit leading eigenvector in influence-function coordinates
    eigenvalue: float
    m0: np.ndarray
    converged: bool = True
    iterations: int = 0


def power_iteration(a: np.ndarray, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER):
    """Leading eigenvector of a symmetric PSD matrix.

    Starts from ``(1, ..., 1) / sqrt(d)`` and stops once successive iterates
    (sign-aligned) differ by at most ``tol`` in Euclidean norm. Returns
    ``(u, eigenvalue, converged, iterations)``; ``u`` is sign-normalised so its
    largest-magnitude entry is positive.
    """
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    v = np.full(d, 1.0 / np.sqrt(d))
    if not np.any(a @ v):
        # start vector in the null space; fall back to the largest diagonal axis
        v = np.zeros(d)
        v[int(np.argmax(np.diag(a)))] = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = a @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            converged = True
            break
        w /= norm
        if w @ v < 0:
            w = -w
        delta = np.linalg.norm(w - v)
        v = w
        if delta <= tol:
            converged = True
            break
    j = int(np.argmax(np.abs(v)))
    if v[j] < 0:
        v = -v
    return v, float(v @ a @ v), converged, it


def leading_direction(pilot_z: np.ndarray, pilot_y: np.ndarray, pilot_theta: np.ndarray, family: Family | str) -> Direction:
    """Maximal-variance direction of the pilot influence functions.

    With ``M0`` the inverse mean pilot Hessian, ``u`` is the leading
    eigenvector of ``M0 (mean_i l' l'^T) M0^T`` and the returned ``c = u^T M0``.
    """
    family = Family.parse(family)
    m0 = pilot_inverse_hessian(pilot_z, pilot_theta, family)
    g = score_matrix(pilot_z, pilot_y, pilot_theta, family)
    meat = g.T @ g / g.shape[0]
    a = m0 @ meat @ m0.T
    a = 0.5 * (a + a.T)
    u, lam, converged, it = power_iteration(a)
    if not converged:
        warnings.warn(f"power iteration did not converge in {it} iterations; using last iterate", RuntimeWarning)
    return Direction(c=u @ m0, u=u, eigenvalue=lam, m0=m0, converged=converged, iterations=it)


def strat_scores(dataset: Dataset, c: np.ndarray, pilot_theta: np.ndarray, family: Family | str) -> np.ndarray:
    """``S_i = c . l'(X_i; theta_pilot)`` for every row, in one pass."""
    family = Family.parse(family)
    c = np.asarray(c, dtype=float)
    if c.shape != (dataset.d,):
        raise InvalidInput(f"direction has length {c.shape}, expected {dataset.d}")
    theta = np.asarray(pilot_theta, dtype=float)
    if theta.shape != (dataset.d,):
        raise InvalidInput(f"pilot theta has length {theta.shape}, expected {dataset.d}")
    poisson = family is Family.POISSON
    s, max_eta, bad = _kernels.glm_scores(dataset.z, dataset.y, theta, c, poisson)
    if poisson and max_eta > ETA_MAX:
        raise RateOverflow(f"linear predictor {max_eta:.4g} exceeds {ETA_MAX} at the pilot estimate")
    if bad >= 0:
        raise InvalidInput(f"stratification score is not finite at row {bad}")
    return s


# --------------------------------------------------------------------------
# equal-count partition


class _LazyIndexSets:
    """Row lists per stratum, built from ``labels`` on first access."""

    _index_sets: list | None

    @property
    def index_sets(self) -> list:
        if self._index_sets is None:
            self._index_sets = _index_sets(self.labels, self.k)
        return self._index_sets


@dataclass
class Partition(_LazyIndexSets):
    labels: np.ndarray  # stratum of every row, 0-based
    sizes: np.ndarray  # rows per stratum
    boundaries: np.ndarray  # largest score of strata 0..k-2
    _index_sets: list | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return self.sizes.shape[0]


def _label_dtype(k: int):
    # small unsigned labels let argsort(kind="stable") use radix sort
    if k <= np.iinfo(np.uint8).max:
        return np.uint8
    if k <= np.iinfo(np.uint16).max:
        return np.uint16
    return np.int64


def _grouped(labels: np.ndarray, k: int):
    """Rows grouped by stratum (ascending within each) and the group offsets."""
    order = np.argsort(labels, kind="stable")
    counts = np.bincount(labels, minlength=k)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return order, offsets


def _index_sets(labels: np.ndarray, k: int) -> list:
    order, offsets = _grouped(labels, k)
    return np.split(order, offsets[1:-1])


def cut_positions(N: int, k: int) -> np.ndarray:
    """Rank cut points ``floor(j N / k)`` for ``j = 1 .. k-1``."""
    j = np.arange(1, k, dtype=np.int64)
    return (j * N) // k


def _check_partition_args(scores, k):
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1:
        raise InvalidInput("scores must be one-dimensional")
    N = scores.shape[0]
    if k < 1:
        raise InvalidInput(f"number of strata must be at least 1, got {k}")
    if k > N:
        raise InvalidInput(f"cannot form {k} strata from {N} observations")
    if not np.all(np.isfinite(scores)):
        raise InvalidInput("scores contain NaN or Inf")
    return scores, N


def _quickselect_labels(scores: np.ndarray, k: int) -> np.ndarray:
    N = scores.shape[0]
    labels = np.empty(N, dtype=_label_dtype(k))

    # Each call owns strata [lo, hi) whose ranks start at `base`; `idx` is kept
    # in ascending row order, so among tied scores the first ones are the
    # smallest row indices.
    def split(idx, vals, lo, hi, base):
        if hi - lo == 1:
            labels[idx] = lo
            return
        mid = lo + (hi - lo + 1) // 2
        cut = (mid * N) // k - base
        pivot = np.partition(vals, cut - 1)[cut - 1]
        left = vals < pivot
        n_less = int(np.count_nonzero(left))
        if n_less < cut:
            eq = np.flatnonzero(vals == pivot)
            left[eq[: cut - n_less]] = True
        right = ~left
        split(idx[left], vals[left], lo, mid, base)
        split(idx[right], vals[right], mid, hi, base + cut)

    split(np.arange(N), scores, 0, k, 0)
    return labels


def _histogram_labels(scores: np.ndarray, k: int, n_bins: int | None = None) -> np.ndarray:
    N = scores.shape[0]
    dtype = _label_dtype(k)
    cuts = cut_positions(N, k)
    if n_bins is None:
        n_bins = int(min(1 << 16, max(64, N // 8)))
    # Bin edges span a central range estimated from a strided subsample, with
    # everything outside clipped into the two end bins; heavy tails would
    # otherwise squeeze the bulk of the scores into a handful of bins.
    probe = scores[:: max(1, N // 4096)]
    lo, hi = np.quantile(probe, [0.001, 0.999])
    if not hi > lo:
        lo, hi = float(scores.min()), float(scores.max())
    if not hi > lo:
        # all tied: rank equals row order
        return np.searchsorted(cuts, np.arange(N), side="right").astype(dtype)
    scale = (n_bins - 2) / (hi - lo)
    # affine map then clip: monotone in the score, so bins never reorder rows
    bins, counts = _kernels.bin_scores(scores, float(lo), float(scale), n_bins)
    end = np.cumsum(counts)
    start = end - counts
    first = np.searchsorted(cuts, start, side="right")
    last = np.searchsorted(cuts, np.maximum(end - 1, start), side="right")
    split = (first != last) & (counts > 0)
    n_split = int(counts[split].sum())
    labels, rows = _kernels.label_bins(bins, first.astype(dtype), split, n_split)
    if n_split:
        b = bins[rows]
        order = np.lexsort((rows, scores[rows], b))
        rows, b = rows[order], b[order]
        # rank = start of bin + position inside the bin
        seg_start = np.searchsorted(b, b, side="left")
        ranks = start[b] + (np.arange(rows.shape[0]) - seg_start)
        labels[rows] = np.searchsorted(cuts, ranks, side="right").astype(dtype)
    return labels


PARTITION_METHODS = ("histogram", "quickselect")


def partition_equal_count(scores: np.ndarray, k: int, method: str = "histogram") -> Partition:
    """Split rows into ``k`` strata of ``floor(N/k)`` or ``ceil(N/k)`` rows by score.

    Stratum ``j`` (0-based) gets the rows whose rank in ``(score, row)`` order
    lies in ``[floor(j N / k), floor((j + 1) N / k))``.

    ``method="quickselect"`` recursively selects the middle cut with
    ``np.partition`` and splits each half again: ``O(N log k)``.
    ``method="histogram"`` buckets all scores into a fine uniform histogram in
    one pass and resolves only the buckets that straddle a cut exactly, so its
    cost is essentially flat in ``k``. Both return identical partitions.
    """
    scores, N = _check_partition_args(scores, k)
    if k == 1:
        labels = np.zeros(N, dtype=np.uint8)
    elif method == "histogram":
        labels = _histogram_labels(scores, k)
    elif method == "quickselect":
        labels = _quickselect_labels(scores, k)
    else:
        raise InvalidInput(f"unknown partition method {method!r}")
    sizes, maxes = _kernels.stratum_stats(labels, scores, k)
    return Partition(labels, sizes, maxes[:-1])


# --------------------------------------------------------------------------
# allocation and plans


def allocate(probs: np.ndarray, labels: np.ndarray, k: int, n: int):
    """Stratum masses ``Pi_j`` and draw counts ``n_j`` summing to ``n``.

    Counts start at ``floor(n Pi_j)``; the remaining units go to the strata with
    the largest fractional parts (ties to the smaller ``j``). Whenever rounding
    each ``n Pi_j`` to the nearest integer already sums to ``n``, the result is
    that rounding.

    Masses are accumulated in row order, the same order the draw uses, so
    ``Pi_j`` is exactly the top of stratum ``j``'s cumulative distribution.
    """
    if n < 1:
        raise InvalidInput("subsample size must be at least 1")
    masses = _kernels.stratum_totals(labels, np.asarray(probs, dtype=float), k)
    target = n * masses
    alloc = np.floor(target).astype(np.int64)
    rem = n - int(alloc.sum())
    if rem > 0:
        frac = target - alloc
        order = np.lexsort((np.arange(k), -frac))
        alloc[order[:rem]] += 1
    elif rem < 0:  # pragma: no cover - only if masses sum above 1 by more than rounding
        raise InvalidInput("stratum masses sum to more than one")
    return masses, alloc


@dataclass
class StratPlan(_LazyIndexSets):
    k: int
    boundaries: np.ndarray
    sizes: np.ndarray
    masses: np.ndarray
    alloc: np.ndarray
    labels: np.ndarray = field(repr=False)
    mode: str = "equal_count"
    _index_sets: list | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return int(self.alloc.sum())

    @property
    def empty_count(self) -> int:
        """Strata that receive no draws."""
        return int(np.count_nonzero(self.alloc == 0))


def single_stratum(plan: SamplingPlan, n: int) -> StratPlan:
    N = plan.N
    labels = np.zeros(N, dtype=np.uint8)
    masses, alloc = allocate(plan.probs, labels, 1, n)
    return StratPlan(1, np.empty(0), np.array([N]), masses, alloc, labels, "none")


def equal_count_plan(scores: np.ndarray, plan: SamplingPlan, k: int, n: int, method: str = "histogram",
                     partition: Partition | None = None) -> StratPlan:
    """Equal-count strata on ``scores`` with masses and counts from ``plan``."""
    part = partition if partition is not None else partition_equal_count(scores, k, method)
    masses, alloc = allocate(plan.probs, part.labels, part.k, n)
    sp = StratPlan(part.k, part.boundaries, part.sizes, masses, alloc, part.labels, "equal_count", part._index_sets)
    if sp.empty_count:
        logger.warning("%d of %d strata receive no draws (n=%d); consider a smaller k", sp.empty_count, sp.k, n)
    return sp


def score_order(scores: np.ndarray) -> np.ndarray:
    """Row indices sorted by ``(score, row)``."""
    scores = np.asarray(scores)
    return np.lexsort((np.arange(scores.shape[0]), scores))


def optimal_partition(scores: np.ndarray, plan: SamplingPlan, n: int, order: np.ndarray | None = None) -> StratPlan:
    """Equal-mass strata: ``n`` strata of sampling mass ``1/n`` with one draw each.

    Observations are walked in score order accumulating ``pi_i``; stratum ``j``
    closes at the first observation whose cumulative mass reaches ``j/n``.
    A single observation heavier than ``1/n`` swallows several cuts; the
    resulting empty strata are dropped and the heavy stratum receives a
    proportionally larger count, so ``sum n_j = n`` still holds.
    """
    scores = np.asarray(scores, dtype=float)
    N = scores.shape[0]
    if not 1 <= n <= N:
        raise InvalidInput(f"need 1 <= n <= N, got n={n}, N={N}")
    if order is None:
        order = score_order(scores)
    cum = np.cumsum(plan.probs[order])
    # a cut reached up to summation rounding counts as reached, so exact ties
    # (e.g. uniform pi with n dividing N) land on the intended observation
    slack = 2 * N * np.finfo(float).eps * cum[-1]
    targets = np.arange(1, n) / n * cum[-1] - slack
    ends = np.searchsorted(cum, targets, side="left")
    ends = np.unique(np.minimum(ends, N - 1))
    ends = ends[ends < N - 1]
    sizes = np.diff(np.concatenate([[-1], ends, [N - 1]]))
    k = sizes.shape[0]
    labels = np.empty(N, dtype=_label_dtype(k))
    labels[order] = np.repeat(np.arange(k), sizes).astype(labels.dtype)
    masses, alloc = allocate(plan.probs, labels, k, n)
    boundaries = scores[order[ends]]
    return StratPlan(k, boundaries, sizes.astype(np.int64), masses, alloc, labels, "equal_mass")


# --------------------------------------------------------------------------
# draws


def stratified_draw(strat: StratPlan, plan: SamplingPlan, streams: Callable[[int], np.random.Generator]) -> list:
    """Draw ``n_j`` rows with replacement inside each stratum ``j``.

    Within stratum ``j`` a row is chosen with probability ``pi_i / Pi_j``.
    ``streams(j)`` supplies the generator for stratum ``j``; strata with
    ``n_j = 0`` consume no randomness and return an empty draw.

    Each draw is an inverse-CDF lookup on the stratum's cumulative mass in
    ascending row order. All strata are resolved together in one pass over
    the rows, so the cost is flat in ``k``. With one stratum this is exactly
    :func:`~mvrs.sampling.draw_with_replacement` over the whole dataset.
    """
    probs = np.asarray(plan.probs, dtype=float)
    alloc = np.asarray(strat.alloc, dtype=np.int64)
    bad = np.flatnonzero((alloc > 0) & (strat.sizes == 0))
    if bad.size:
        j = int(bad[0])
        raise InvalidInput(f"stratum {j} is empty but allocated {alloc[j]} draws")
    offsets = np.concatenate([[0], np.cumsum(alloc)])
    u = np.empty(int(offsets[-1]))
    for j in np.flatnonzero(alloc):
        u[offsets[j]:offsets[j + 1]] = streams(int(j)).random(int(alloc[j])) * strat.masses[j]
    stratum = np.repeat(np.arange(strat.k), alloc)
    # ascending within each stratum, strata in order
    perm = np.lexsort((u, stratum))
    rows = np.empty(u.shape[0], dtype=np.int64)
    rows[perm] = _kernels.inverse_cdf_rows(strat.labels, probs, strat.k, u[perm], offsets)
    return [Draw(r, probs[r]) for r in np.split(rows, offsets[1:-1])]
