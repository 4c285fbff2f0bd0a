"""Synthetic GLM data and the Monte Carlo replication harness.

One dataset (and its full-data estimate) is generated per experiment. Each
replicate draws a fresh pilot and then runs every requested method, subsample
size and strata count against that pilot. Failed fits are dropped and
counted; a cell with more than 5% failures is flagged invalid.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as rngmod
from .data import Dataset
from .errors import InvalidInput, MVRSError
from .estimator import full_fit
from .model import Family, check_response, linear_predictor, mean_and_variance
from .pipeline import STEPS, SUBSAMPLE_METHODS, prepare_pilot, run_method

logger = logging.getLogger(__name__)

CASES = (1, 2, 3, 4)
MAX_FAILURE_RATE = 0.05
DEFAULT_THETA = (0.5, 0.5, 0.5, 0.5, 0.5)


def ar1_cov(p: int, rho: float = 0.5) -> np.ndarray:
    i = np.arange(p)
    return rho ** np.abs(i[:, None] - i[None, :])


def gen_covariates(case: int, N: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """Covariate matrix for one of the four simulation designs.

    1: N(0, I); 2: N(1, I); 3: N(0, S) with S_ij = 0.5^|i-j|; 4: i.i.d. Exp(1).
    """
    if p < 1:
        raise InvalidInput("need at least one covariate")
    if case == 1:
        return rng.standard_normal((N, p))
    if case == 2:
        return 1.0 + rng.standard_normal((N, p))
    if case == 3:
        chol = np.linalg.cholesky(ar1_cov(p))
        return rng.standard_normal((N, p)) @ chol.T
    if case == 4:
        # inverse CDF; 1 - U lies in (0, 1]
        return -np.log1p(-rng.random((N, p)))
    raise InvalidInput(f"unknown covariate case {case}")


def gen_response(family: Family | str, theta: np.ndarray, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    family = Family.parse(family)
    eta = linear_predictor(z, theta)
    mu, _ = mean_and_variance(eta, family)
    if family is Family.LOGISTIC:
        return (rng.random(mu.shape[0]) < mu).astype(float)
    return rng.poisson(mu).astype(float)


def generate_dataset(family, case: int, N: int, theta, seed: int) -> Dataset:
    theta = np.asarray(theta, dtype=float)
    z = gen_covariates(case, N, theta.shape[0] - 1, rngmod.stream(seed, "covariates"))
    y = gen_response(family, theta, z, rngmod.stream(seed, "response"))
    return Dataset(z, y)


@dataclass
class SimConfig:
    family: str = "poisson"
    case: int = 1
    N: int = 100_000
    n: list = field(default_factory=lambda: [200, 500, 800, 1000])
    n0: int = 200
    k: list = field(default_factory=lambda: [30])
    R: int = 200
    theta_true: list = field(default_factory=lambda: list(DEFAULT_THETA))
    seed: int = 2024
    methods: list = field(default_factory=lambda: list(SUBSAMPLE_METHODS))
    min_prob_floor: float = 0.0
    estimate_mse: bool = False
    partition_method: str = "histogram"

    def __post_init__(self):
        if isinstance(self.n, int):
            self.n = [self.n]
        if isinstance(self.k, int):
            self.k = [self.k]
        self.n = [int(v) for v in self.n]
        self.k = [int(v) for v in self.k]
        self.methods = [m.lower() for m in self.methods]
        self.validate()

    def validate(self) -> None:
        Family.parse(self.family)
        d = len(self.theta_true)
        if self.case not in CASES:
            raise InvalidInput(f"case must be one of {CASES}")
        if self.R < 1:
            raise InvalidInput("R must be at least 1")
        if self.n0 < d:
            raise InvalidInput(f"n0={self.n0} is smaller than the parameter dimension {d}")
        if self.n0 >= self.N:
            raise InvalidInput("pilot larger than dataset")
        if not self.n or min(self.n) < 1:
            raise InvalidInput("subsample sizes must be positive")
        if not self.k or min(self.k) < 1 or max(self.k) > self.N:
            raise InvalidInput("strata counts must lie in [1, N]")
        bad = [m for m in self.methods if m not in SUBSAMPLE_METHODS]
        if bad or not self.methods:
            raise InvalidInput(f"unknown methods {bad}; choose from {SUBSAMPLE_METHODS}")
        for n in self.n:
            for k in self.k:
                if any(m.startswith("mvrs") for m in self.methods) and n < k:
                    logger.warning("n=%d < k=%d: some strata will receive no draws", n, k)

    def cells(self) -> list:
        """``(method, n, k)`` triples; ``k`` is None where it does not apply."""
        out = []
        for m in self.methods:
            for n in self.n:
                if m.startswith("mvrs"):
                    out += [(m, n, k) for k in self.k]
                else:
                    out.append((m, n, None))
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidInput(f"unknown SimConfig keys: {sorted(unknown)}")
        return cls(**d)


def _replicate(dataset: Dataset, cfg: SimConfig, r: int):
    """Estimates of every cell for replicate ``r``; None marks a failed fit."""
    cells = cfg.cells()
    try:
        ctx = prepare_pilot(dataset, cfg.family, cfg.n0, cfg.seed, r, cfg.min_prob_floor, cfg.partition_method)
    except MVRSError as exc:
        logger.debug("replicate %d: pilot failed: %s", r, exc)
        return [None] * len(cells), [None] * len(cells)
    thetas, mse_hats = [], []
    for m, n, k in cells:
        try:
            res = run_method(ctx, m, n, k or 1, with_variance=cfg.estimate_mse)
        except MVRSError as exc:
            logger.debug("replicate %d %s n=%d: %s", r, m, n, exc)
            thetas.append(None)
            mse_hats.append(None)
            continue
        thetas.append(res.theta if res.fit.converged else None)
        mse_hats.append(res.cov.mse_hat if res.cov is not None else None)
    return thetas, mse_hats


_WORKER: dict = {}


def _init_worker(dataset, cfg):
    _WORKER["dataset"], _WORKER["cfg"] = dataset, cfg


def _worker_replicate(r):
    return _replicate(_WORKER["dataset"], _WORKER["cfg"], r)


@dataclass
class CellReport:
    method: str
    n: int
    k: int | None
    mse: float | None
    se: list
    bias: list
    mean_mse_hat: float | None
    n_ok: int
    n_failed: int
    valid: bool


@dataclass
class SimReport:
    config: dict
    theta_full: list
    full_converged: bool
    cells: list
    valid: bool

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "theta_full": self.theta_full,
            "full_converged": self.full_converged,
            "valid": self.valid,
            "cells": [asdict(c) for c in self.cells],
        }

    def cell(self, method: str, n: int, k: int | None = None) -> CellReport:
        for c in self.cells:
            if c.method == method and c.n == n and (k is None or c.k == k):
                return c
        raise KeyError((method, n, k))


def summarize(estimates, theta_full: np.ndarray, mse_hats=None) -> dict:
    """Empirical MSE, per-component SE and bias of replicate estimates around ``theta_full``."""
    ok = [t for t in estimates if t is not None]
    failed = len(estimates) - len(ok)
    if not ok:
        return dict(mse=None, se=[], bias=[], mean_mse_hat=None, n_ok=0, n_failed=failed)
    err = np.array(ok) - theta_full
    comp_mse = np.mean(err**2, axis=0)
    hats = [h for h in (mse_hats or []) if h is not None]
    return dict(
        mse=float(np.mean(np.sum(err**2, axis=1))),
        se=np.sqrt(comp_mse).tolist(),
        bias=err.mean(axis=0).tolist(),
        mean_mse_hat=float(np.mean(hats)) if hats else None,
        n_ok=len(ok),
        n_failed=failed,
    )


def run_experiment(cfg: SimConfig, n_jobs: int = 1, dataset: Dataset | None = None) -> SimReport:
    """Run the replication experiment described by ``cfg``.

    Results depend only on ``cfg`` (and ``dataset`` when supplied): replicates
    use their own named streams and are reduced in replicate order, so the
    report is identical for any ``n_jobs``.
    """
    family = Family.parse(cfg.family)
    if dataset is None:
        dataset = generate_dataset(family, cfg.case, cfg.N, cfg.theta_true, cfg.seed)
    else:
        check_response(dataset.y, family)
    full = full_fit(dataset, family)
    cells = cfg.cells()

    if n_jobs == 1:
        results = [_replicate(dataset, cfg, r) for r in range(cfg.R)]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs, initializer=_init_worker, initargs=(dataset, cfg)) as ex:
            results = list(ex.map(_worker_replicate, range(cfg.R), chunksize=max(1, cfg.R // (4 * n_jobs))))

    reports = []
    all_valid = full.converged
    for c, (m, n, k) in enumerate(cells):
        est = [res[0][c] for res in results]
        hats = [res[1][c] for res in results]
        s = summarize(est, full.theta_hat, hats)
        valid = s["n_failed"] <= MAX_FAILURE_RATE * cfg.R and s["n_ok"] > 0
        all_valid &= valid
        reports.append(CellReport(m, n, k, valid=valid, **s))
    return SimReport(asdict(cfg), full.theta_hat.tolist(), bool(full.converged), reports, bool(all_valid))


def time_methods(dataset: Dataset, cfg: SimConfig, repeats: int = 3, warmup: int = 1) -> dict:
    """Median wall-clock per method (and per step) over ``repeats`` fresh pipelines.

    Each repeat builds its own pilot context so no work is shared between
    methods. Cells are interleaved within every repeat so that machine load
    drifts affect all of them alike; ``warmup`` untimed rounds come first.
    Returns ``{cell_label: {"total": ms, step: ms, ..., "n": n}}``.
    """
    if repeats < 1:
        raise InvalidInput("repeats must be at least 1")
    n = max(cfg.n)
    cells = []
    for m in cfg.methods:
        for k in (cfg.k if m.startswith("mvrs") else [None]):
            cells.append((m if k is None else f"{m}@k={k}", m, k))
    rows: dict = {label: [] for label, _, _ in cells}
    for rep in range(warmup + repeats):
        for label, m, k in cells:
            t0 = time.perf_counter()
            ctx = prepare_pilot(dataset, cfg.family, cfg.n0, cfg.seed, 10**6 + rep, cfg.min_prob_floor, cfg.partition_method)
            res = run_method(ctx, m, n, k or 1, with_variance=False)
            total = 1e3 * (time.perf_counter() - t0)
            if rep >= warmup:
                rows[label].append({"total": total, **res.timing_ms})
    out = {}
    for label, rs in rows.items():
        out[label] = {key: float(np.median([r.get(key, 0.0) for r in rs])) for key in ("total",) + STEPS}
        out[label]["n"] = n
    return out
