"""Weighted Newton-Raphson maximiser of ``sum_i w_i * l(X_i; theta)``."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import Diverged, InvalidInput, RateOverflow, SingularHessian
from .model import Family, augment, linear_predictor, loglik_terms, mean_and_variance

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
MAX_HALVINGS = 30
DIVERGENCE_NORM = 1e4
# Newton step still this large once the score vanishes: the supremum is at infinity
ESCAPE_STEP = 0.1


@dataclass
class FitResult:
    theta_hat: np.ndarray
    iterations: int
    converged: bool
    final_grad_norm: float
    neg_hessian_at_opt: np.ndarray  # weight-normalised: -sum w l'' / sum w
    loglik: float


def _objective(x, y, w, theta, family):
    eta = x @ theta
    return float(np.sum(w * loglik_terms(eta, y, family)))


def fit(
    z: np.ndarray,
    y: np.ndarray,
    family: Family | str,
    weights: np.ndarray | None = None,
    init: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> FitResult:
    """Maximise the weighted log-likelihood by Newton steps with step halving.

    Convergence is declared when the sup-norm of the weighted score, divided by
    the total weight, drops to ``tol``. Normalising by the total weight keeps
    the stopping rule invariant to rescaling ``weights`` (inverse-probability
    weights are of order ``N / n``).

    Raises
    ------
    SingularHessian
        The weighted Hessian is not negative definite at some iterate.
    Diverged
        ``||theta||`` exceeded ``1e4``, or the score vanished while the Newton
        step stayed large, which means the likelihood keeps increasing towards
        infinity (separable logistic data, all-zero Poisson responses).

    Running out of iterations is not an error: the result has ``converged=False``.
    """
    family = Family.parse(family)
    if tol <= 0 or max_iter < 1:
        raise InvalidInput("tol must be positive and max_iter at least 1")
    y = np.asarray(y, dtype=float).reshape(-1)
    n = y.shape[0]
    if n == 0:
        raise InvalidInput("cannot fit an empty sample")
    z = np.asarray(z, dtype=float)
    z = z.reshape(n, -1)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,) or not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidInput("weights must be finite, non-negative and one per row")
    total = float(w.sum())
    if total <= 0:
        raise InvalidInput("all weights are zero")
    x = augment(z)
    d = x.shape[1]
    theta = np.zeros(d) if init is None else np.array(init, dtype=float)
    linear_predictor(z[:1], theta)  # dimension / finiteness check

    value = _objective(x, y, w, theta, family)
    it = 0
    converged = False
    while True:
        eta = x @ theta
        mu, v = mean_and_variance(eta, family)
        grad = x.T @ (w * (y - mu))
        neg_h = (x.T * (w * v)) @ x
        gnorm = float(np.max(np.abs(grad))) / total
        if gnorm > tol and it >= max_iter:
            break
        try:
            chol = np.linalg.cholesky(neg_h)
        except np.linalg.LinAlgError:
            raise SingularHessian(f"weighted Hessian not invertible at iteration {it}") from None
        step = np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
        if gnorm <= tol:
            if np.max(np.abs(step)) > ESCAPE_STEP:
                raise Diverged(f"score vanished with Newton step {np.max(np.abs(step)):.3g} "
                               "still large: no finite maximiser (separated data?)")
            converged = True
            break
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            cand = theta + t * step
            try:
                cand_value = _objective(x, y, w, cand, family)
            except RateOverflow:
                cand_value = -np.inf
            if cand_value >= value:
                accepted = True
                break
            t *= 0.5
        it += 1
        if not accepted:
            # no ascent possible at working precision
            logger.debug("line search exhausted at iteration %d (grad %.3g)", it, gnorm)
            break
        theta, value = cand, cand_value
        if np.linalg.norm(theta) > DIVERGENCE_NORM:
            raise Diverged(f"||theta|| = {np.linalg.norm(theta):.3g} after {it} iterations")

    return FitResult(
        theta_hat=theta,
        iterations=it,
        converged=converged,
        final_grad_norm=gnorm,
        neg_hessian_at_opt=neg_h / total,
        loglik=value,
    )


def full_fit(dataset: Dataset, family: Family | str, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> FitResult:
    """Full-data estimator: :func:`fit` with unit weights over every row."""
    return fit(dataset.z, dataset.y, family, tol=tol, max_iter=max_iter)
