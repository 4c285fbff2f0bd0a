"""End-to-end subsample estimation: pilot, probabilities, strata, draw, fit.

A :class:`PilotContext` holds everything that depends only on the pilot
(steps 1a, 1a' and the direction/score part of 1b) and computes each piece
lazily, once. :func:`run_method` then runs the method-specific remainder. The
replication harness builds one context per replicate and runs every method
and subsample size against it, so methods share the pilot.

Randomness: the pilot draw uses the stream ``(seed, "pilot", replicate)`` and
stratum ``j`` of the main draw uses ``(seed, "draw", replicate, j)`` for every
method. Unstratified methods are one-stratum plans, so ``mvrs-u`` with
``k = 1`` reproduces ``unif`` exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .data import Dataset
from .errors import DegenerateVariance, InvalidInput, MVRSError
from .estimator import DEFAULT_MAX_ITER, DEFAULT_TOL, FitResult, fit, full_fit
from .model import Family
from .sampling import SamplingPlan, draw_with_replacement, mix_with_uniform, optimal_probs, pilot_inverse_hessian, uniform_probs
from .stratify import (
    Direction,
    Partition,
    StratPlan,
    equal_count_plan,
    leading_direction,
    optimal_partition,
    partition_equal_count,
    score_order,
    single_stratum,
    strat_scores,
    stratified_draw,
)
from .variance import CovEstimate, plug_in_estimate

METHODS = ("full", "unif", "opt", "mvrs-u", "mvrs-o", "optmvrs-u", "optmvrs-o")
SUBSAMPLE_METHODS = METHODS[1:]
STEPS = ("1a", "1a'", "1b", "2a", "2b")


class PilotFailed(MVRSError):
    """The pilot fit did not converge."""


class _Timer:
    def __init__(self, sink: dict, key: str):
        self.sink, self.key = sink, key

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.sink[self.key] = self.sink.get(self.key, 0.0) + 1e3 * (time.perf_counter() - self.t0)


def _uses(method: str) -> tuple[bool, bool]:
    """(needs optimal probabilities, needs scores)."""
    return method.endswith("-o") or method == "opt", method.startswith(("mvrs", "optmvrs"))


@dataclass
class PilotContext:
    dataset: Dataset
    family: Family
    seed: int
    replicate: int
    n0: int
    pilot_indices: np.ndarray
    pilot_fit: FitResult
    min_prob_floor: float = 0.0
    partition_method: str = "histogram"
    timing_ms: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def draw_stream(self, j: int) -> np.random.Generator:
        return rngmod.stream(self.seed, "draw", self.replicate, j)

    @property
    def pilot_theta(self) -> np.ndarray:
        return self.pilot_fit.theta_hat

    @property
    def uniform_plan(self) -> SamplingPlan:
        if "unif" not in self._cache:
            self._cache["unif"] = uniform_probs(self.dataset.N)
        return self._cache["unif"]

    @property
    def m0(self) -> np.ndarray:
        if "m0" not in self._cache:
            pz = self.dataset.z[self.pilot_indices]
            self._cache["m0"] = pilot_inverse_hessian(pz, self.pilot_theta, self.family)
        return self._cache["m0"]

    @property
    def optimal_plan(self) -> SamplingPlan:
        if "opt" not in self._cache:
            with _Timer(self.timing_ms, "1a'"):
                plan = optimal_probs(self.dataset, self.family, self.pilot_theta, self.m0)
                self._cache["opt"] = mix_with_uniform(plan, self.min_prob_floor)
        return self._cache["opt"]

    @property
    def direction(self) -> Direction:
        if "dir" not in self._cache:
            with _Timer(self.timing_ms, "1b"):
                idx = self.pilot_indices
                self._cache["dir"] = leading_direction(self.dataset.z[idx], self.dataset.y[idx], self.pilot_theta, self.family)
        return self._cache["dir"]

    @property
    def scores(self) -> np.ndarray:
        if "scores" not in self._cache:
            c = self.direction.c
            with _Timer(self.timing_ms, "1b"):
                self._cache["scores"] = strat_scores(self.dataset, c, self.pilot_theta, self.family)
        return self._cache["scores"]

    def partition(self, k: int) -> Partition:
        key = ("part", k)
        if key not in self._cache:
            s = self.scores
            with _Timer(self.timing_ms, "1b"):
                self._cache[key] = partition_equal_count(s, k, self.partition_method)
        return self._cache[key]

    @property
    def order(self) -> np.ndarray:
        if "order" not in self._cache:
            s = self.scores
            with _Timer(self.timing_ms, "1b"):
                self._cache["order"] = score_order(s)
        return self._cache["order"]

    def plan_for(self, method: str) -> SamplingPlan:
        needs_opt, _ = _uses(method)
        return self.optimal_plan if needs_opt else self.uniform_plan


def prepare_pilot(
    dataset: Dataset,
    family: Family | str,
    n0: int,
    seed: int,
    replicate: int = 0,
    min_prob_floor: float = 0.0,
    partition_method: str = "histogram",
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> PilotContext:
    """Step 1a: uniform pilot subsample of size ``n0`` and its fit."""
    family = Family.parse(family)
    if n0 >= dataset.N:
        raise InvalidInput(f"pilot larger than dataset (n0={n0}, N={dataset.N})")
    if n0 < dataset.d:
        raise InvalidInput(f"pilot size n0={n0} is smaller than the parameter dimension {dataset.d}")
    timing: dict = {}
    with _Timer(timing, "1a"):
        unif = uniform_probs(dataset.N)
        draw = draw_with_replacement(np.arange(dataset.N), unif.probs, n0, rngmod.stream(seed, "pilot", replicate))
        pf = fit(dataset.z[draw.indices], dataset.y[draw.indices], family, tol=tol, max_iter=max_iter)
    if not pf.converged:
        raise PilotFailed(f"pilot fit did not converge in {pf.iterations} iterations")
    ctx = PilotContext(dataset, family, seed, replicate, n0, draw.indices, pf, min_prob_floor, partition_method, timing)
    ctx._cache["unif"] = unif
    return ctx


@dataclass
class SubsampleResult:
    method: str
    n: int
    k: int
    fit: FitResult
    strat: StratPlan | None = None
    draws: list | None = None
    cov: CovEstimate | None = None
    timing_ms: dict = field(default_factory=dict)

    @property
    def theta(self) -> np.ndarray:
        return self.fit.theta_hat


def build_strata(ctx: PilotContext, method: str, n: int, k: int = 1) -> StratPlan:
    """Strata for ``method``; unstratified methods get a single stratum."""
    plan = ctx.plan_for(method)
    if method in ("unif", "opt"):
        return single_stratum(plan, n)
    if method.startswith("optmvrs"):
        order = ctx.order
        with _Timer(ctx.timing_ms, "1b"):
            return optimal_partition(ctx.scores, plan, n, order=order)
    if method.startswith("mvrs"):
        part = ctx.partition(k)
        with _Timer(ctx.timing_ms, "1b"):
            return equal_count_plan(ctx.scores, plan, k, n, partition=part)
    raise InvalidInput(f"unknown subsampling method {method!r}")


def run_method(
    ctx: PilotContext,
    method: str,
    n: int,
    k: int = 1,
    with_variance: bool = True,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SubsampleResult:
    """Steps 1a' to 2b of one subsampling method against a prepared pilot.

    The returned ``timing_ms`` covers every step the method needs, including
    the shared pilot-dependent steps.
    """
    if method not in SUBSAMPLE_METHODS:
        raise InvalidInput(f"unknown subsampling method {method!r}")
    if n < 1:
        raise InvalidInput("subsample size must be at least 1")
    if method.startswith("mvrs") and not 1 <= k <= ctx.dataset.N:
        raise InvalidInput(f"need 1 <= k <= N, got k={k}")
    strat = build_strata(ctx, method, n, k)
    plan = ctx.plan_for(method)
    local: dict = {}
    with _Timer(local, "2a"):
        draws = stratified_draw(strat, plan, ctx.draw_stream)
    with _Timer(local, "2b"):
        rows, weights = [], []
        for draw, pi_j, nj in zip(draws, strat.masses, strat.alloc):
            if nj == 0:
                continue
            rows.append(draw.indices)
            weights.append(pi_j / (nj * draw.realized_probs))
        rows = np.concatenate(rows)
        weights = np.concatenate(weights)
        res = fit(ctx.dataset.z[rows], ctx.dataset.y[rows], ctx.family, weights=weights, tol=tol, max_iter=max_iter)
    cov = None
    if with_variance and res.converged:
        try:
            cov = plug_in_estimate(draws, strat.masses, ctx.dataset, res.theta_hat, ctx.family)
        except DegenerateVariance:
            cov = None
    timing = {"1a": ctx.timing_ms.get("1a", 0.0)}
    needs_opt, needs_scores = _uses(method)
    if needs_opt:
        timing["1a'"] = ctx.timing_ms.get("1a'", 0.0)
    if needs_scores:
        # cumulative over the context; exact when the context serves one method
        timing["1b"] = ctx.timing_ms.get("1b", 0.0)
    timing.update(local)
    return SubsampleResult(method, n, strat.k, res, strat, draws, cov, timing)


def run_full(dataset: Dataset, family: Family | str, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> SubsampleResult:
    timing: dict = {}
    with _Timer(timing, "2b"):
        res = full_fit(dataset, family, tol=tol, max_iter=max_iter)
    return SubsampleResult("full", dataset.N, 1, res, timing_ms=timing)
