"""Subsampling probabilities and with-replacement draws."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import Dataset
from .errors import DegenerateScores, InvalidInput, SingularHessian
from .model import Family, augment, linear_predictor, mean_and_variance, mean_hessian


class Scheme(str, Enum):
    UNIFORM = "uniform"
    OPTIMAL = "optimal"


@dataclass
class SamplingPlan:
    probs: np.ndarray
    scheme: Scheme
    pilot_theta: np.ndarray | None = None
    # probabilities are built from pilot quantities, not the full-data estimate
    pilot_based: bool = False

    @property
    def N(self) -> int:
        return self.probs.shape[0]


@dataclass
class Draw:
    indices: np.ndarray
    realized_probs: np.ndarray

    def __len__(self) -> int:
        return self.indices.shape[0]


def uniform_probs(N: int) -> SamplingPlan:
    if N < 1:
        raise InvalidInput("uniform probabilities need N >= 1")
    return SamplingPlan(np.full(N, 1.0 / N), Scheme.UNIFORM)


def mix_with_uniform(plan: SamplingPlan, floor: float) -> SamplingPlan:
    """Return ``(1 - floor) * pi + floor / N``; ``floor=0`` returns ``plan`` unchanged."""
    if not 0.0 <= floor <= 1.0:
        raise InvalidInput("min-prob floor must lie in [0, 1]")
    if floor == 0.0:
        return plan
    probs = (1.0 - floor) * plan.probs + floor / plan.N
    return SamplingPlan(probs / probs.sum(), plan.scheme, plan.pilot_theta, plan.pilot_based)


def pilot_inverse_hessian(pilot_z: np.ndarray, pilot_theta: np.ndarray, family: Family) -> np.ndarray:
    """``M0 = [mean_i l''(X~_i; theta_pilot)]^{-1}`` over the pilot rows."""
    h = mean_hessian(pilot_z, pilot_theta, family)
    try:
        np.linalg.cholesky(-h)
        return np.linalg.inv(h)
    except np.linalg.LinAlgError:
        raise SingularHessian("pilot Hessian is singular") from None


def optimal_probs(
    dataset: Dataset,
    family: Family | str,
    pilot_theta: np.ndarray,
    m0: np.ndarray,
) -> SamplingPlan:
    """A-optimal probabilities ``pi_i ∝ ||M0 l'(X_i; theta_pilot)||``.

    ``m0`` is the inverse mean pilot Hessian (see :func:`pilot_inverse_hessian`).
    The score of observation ``i`` is ``r_i * x_i`` with ``x_i = (1, z_i)``, so the
    norm factorises as ``|r_i| * ||M0 x_i||`` and a single ``O(N d^2)`` pass suffices.
    """
    family = Family.parse(family)
    m0 = np.asarray(m0, dtype=float)
    if not np.all(np.isfinite(m0)):
        raise SingularHessian("M0 is not finite")
    eta = linear_predictor(dataset.z, pilot_theta)
    mu, _ = mean_and_variance(eta, family)
    r = np.abs(dataset.y - mu)
    # rows of x @ m0.T are M0 x_i
    mx = m0[:, 0] + dataset.z @ np.ascontiguousarray(m0[:, 1:].T)
    norms = r * np.sqrt(np.einsum("ij,ij->i", mx, mx))
    total = norms.sum()
    if not np.isfinite(total):
        raise DegenerateScores("influence norms are not finite")
    if total <= 0:
        raise DegenerateScores("every influence-function norm is zero")
    probs = norms / total
    if np.any(probs <= 0):
        # zero-residual rows would never be drawn; keep them reachable
        tiny = np.finfo(float).tiny * 1e10
        probs = np.maximum(probs, tiny)
        probs /= probs.sum()
    return SamplingPlan(probs, Scheme.OPTIMAL, np.asarray(pilot_theta, dtype=float).copy(), pilot_based=True)


def draw_positions(cum: np.ndarray, lo: int, hi: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` positions in ``[lo, hi)`` drawn from the increments of ``cum``.

    ``cum`` is a cumulative sum of non-negative weights; position ``t`` is drawn
    with probability proportional to ``cum[t] - cum[t-1]``.
    """
    base = cum[lo - 1] if lo > 0 else 0.0
    u = base + rng.random(m) * (cum[hi - 1] - base)
    pos = np.searchsorted(cum[lo:hi], u, side="right")
    np.minimum(pos, hi - lo - 1, out=pos)
    return pos + lo


def draw_with_replacement(indices: np.ndarray, probs: np.ndarray, m: int, rng: np.random.Generator) -> Draw:
    """Draw ``m`` i.i.d. elements of ``indices`` with probability ∝ ``probs``.

    Inverse-CDF sampling: one cumulative sum over the slice, then a binary
    search per draw.
    """
    indices = np.asarray(indices)
    probs = np.asarray(probs, dtype=float)
    if m < 0:
        raise InvalidInput("m must be non-negative")
    if m == 0:
        return Draw(np.empty(0, dtype=np.int64), np.empty(0))
    if indices.shape[0] == 0:
        raise InvalidInput("cannot draw from an empty slice")
    if indices.shape != probs.shape:
        raise InvalidInput("indices and probs must have the same length")
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise InvalidInput("probabilities must be finite and non-negative")
    pos = draw_positions(np.cumsum(probs), 0, indices.shape[0], m, rng)
    return Draw(indices[pos].astype(np.int64, copy=False), probs[pos])
