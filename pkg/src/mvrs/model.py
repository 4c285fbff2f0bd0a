"""Logistic and Poisson log-likelihoods with their score and Hessian.

Everything here is written in the maximisation orientation: ``loglik`` is the
per-observation log-likelihood, ``score`` its gradient and ``hessian`` its
(negative semi-definite) second derivative. Covariates never carry an
intercept column; the leading 1 is added internally, so a parameter vector
for ``p`` covariates has length ``d = p + 1`` with the intercept first.

The single-observation functions are the reference definitions. The batched
helpers (``linear_predictor``, ``mean_and_variance``, ``loglik_terms``) are the
vectorised forms used by the estimator and the samplers.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import DimensionError, InvalidInput, RateOverflow

# exp(709.78) is the largest finite double
ETA_MAX = 700.0


class Family(str, Enum):
    LOGISTIC = "logistic"
    POISSON = "poisson"

    @classmethod
    def parse(cls, value: "Family | str") -> "Family":
        if isinstance(value, Family):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidInput(f"unknown family {value!r}; expected 'logistic' or 'poisson'") from None


def augment(z: np.ndarray) -> np.ndarray:
    """Prepend the intercept column to an ``(N, p)`` covariate matrix."""
    z = np.asarray(z, dtype=float)
    return np.hstack([np.ones((z.shape[0], 1)), z])


def _check_theta(theta: np.ndarray, p: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.shape[0] != p + 1:
        raise DimensionError(f"theta has length {theta.shape}, expected {p + 1} for {p} covariates")
    if not np.all(np.isfinite(theta)):
        raise InvalidInput("theta contains NaN or Inf")
    return theta


def linear_predictor(z: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """``eta_i = theta_0 + theta_1 . z_i`` for every row of ``z``."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z.reshape(1, -1)
    theta = _check_theta(theta, z.shape[1])
    eta = theta[0] + z @ theta[1:] if z.shape[1] else np.full(z.shape[0], theta[0])
    if not np.all(np.isfinite(eta)):
        raise InvalidInput("covariates contain NaN or Inf")
    return eta


def sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta, dtype=float)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def log1pexp(eta: np.ndarray) -> np.ndarray:
    """Stable ``log(1 + exp(eta))``."""
    return np.where(eta > 0, eta + np.log1p(np.exp(-np.abs(eta))), np.log1p(np.exp(-np.abs(eta))))


def _poisson_exp(eta: np.ndarray) -> np.ndarray:
    if eta.size and eta.max() > ETA_MAX:
        raise RateOverflow(f"poisson linear predictor {eta.max():.4g} exceeds {ETA_MAX}")
    return np.exp(eta)


def mean_and_variance(eta: np.ndarray, family: Family) -> tuple[np.ndarray, np.ndarray]:
    """Mean ``mu(eta)`` and variance function ``v(eta)`` of the response."""
    if Family.parse(family) is Family.LOGISTIC:
        mu = sigmoid(eta)
        return mu, mu * (1.0 - mu)
    mu = _poisson_exp(eta)
    return mu, mu


def loglik_terms(eta: np.ndarray, y: np.ndarray, family: Family) -> np.ndarray:
    """Per-observation log-likelihood given the linear predictor."""
    if Family.parse(family) is Family.LOGISTIC:
        return y * eta - log1pexp(eta)
    return y * eta - _poisson_exp(eta)


def check_response(y: np.ndarray, family: Family) -> None:
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise InvalidInput("response contains NaN or Inf")
    if Family.parse(family) is Family.LOGISTIC:
        if not np.all((y == 0) | (y == 1)):
            raise InvalidInput("logistic response must be 0 or 1")
    elif np.any(y < 0) or not np.all(y == np.floor(y)):
        raise InvalidInput("poisson response must be a non-negative integer")


def _single(z, y, theta, family):
    family = Family.parse(family)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    y = float(y)
    if not np.isfinite(y):
        raise InvalidInput("response is NaN or Inf")
    eta = linear_predictor(z.reshape(1, -1), theta)
    return family, np.concatenate([[1.0], z]), eta, y


def loglik(z, y, theta, family) -> float:
    """Log-likelihood of one observation ``(z, y)``."""
    family, _, eta, y = _single(z, y, theta, family)
    return float(loglik_terms(eta, np.array([y]), family)[0])


def score(z, y, theta, family) -> np.ndarray:
    """Gradient of :func:`loglik` with respect to ``theta``: ``(y - mu) * (1, z)``."""
    family, x, eta, y = _single(z, y, theta, family)
    mu, _ = mean_and_variance(eta, family)
    return (y - mu[0]) * x


def hessian(z, y, theta, family) -> np.ndarray:
    """Second derivative of :func:`loglik`: ``-v(eta) * x x^T``."""
    family, x, eta, _ = _single(z, y, theta, family)
    _, v = mean_and_variance(eta, family)
    return -v[0] * np.outer(x, x)


def score_matrix(z: np.ndarray, y: np.ndarray, theta: np.ndarray, family: Family) -> np.ndarray:
    """Stack of per-observation scores, shape ``(N, d)``."""
    eta = linear_predictor(z, theta)
    mu, _ = mean_and_variance(eta, family)
    r = np.asarray(y, dtype=float) - mu
    return r[:, None] * augment(np.asarray(z).reshape(len(r), -1))


def mean_hessian(z: np.ndarray, theta: np.ndarray, family: Family, weights=None) -> np.ndarray:
    """``sum_i w_i * hessian_i / sum_i w_i`` (plain mean when ``weights`` is None)."""
    z = np.asarray(z, dtype=float).reshape(np.shape(z)[0], -1)
    eta = linear_predictor(z, theta)
    _, v = mean_and_variance(eta, family)
    w = v if weights is None else v * weights
    total = len(v) if weights is None else float(np.sum(weights))
    x = augment(z)
    return -(x.T * w) @ x / total
