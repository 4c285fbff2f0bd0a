"""Asymptotic covariance: exact full-data formulas and the subsample plug-in.

All matrices here are on the "V" scale, i.e. ``Cov(theta_n - theta_N) ≈ V / n``.

``exact_v_sub`` and ``exact_v_str`` evaluate the closed-form covariance of the
plain and the stratified with-replacement subsampling estimators on a whole
dataset. They loop over observations and are meant for small ``N`` (tests,
diagnostics). ``stratification_gain`` computes the variance reduction
directly from its conditional-expectation definition, independently of the
two closed forms. ``plug_in_estimate`` uses only the drawn subsample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import DegenerateVariance, SingularHessian
from .model import Family, augment, linear_predictor, mean_and_variance, score_matrix


@dataclass
class CovEstimate:
    v_hat: np.ndarray
    mse_hat: float
    m_hat: np.ndarray
    phi_hat: np.ndarray
    singleton_strata: int = 0
    n: int = 0


def _inv(h: np.ndarray, what: str) -> np.ndarray:
    try:
        np.linalg.cholesky(-h)
        return np.linalg.inv(h)
    except np.linalg.LinAlgError:
        raise SingularHessian(f"{what} is singular") from None


def influence(dataset: Dataset, theta: np.ndarray, family: Family | str) -> np.ndarray:
    """Rows ``phi_i = M(theta) l'(X_i; theta)`` with ``M = [mean_i l''_i]^{-1}``."""
    family = Family.parse(family)
    x = augment(dataset.z)
    eta = linear_predictor(dataset.z, theta)
    _, v = mean_and_variance(eta, family)
    h = -(x.T * v) @ x / dataset.N
    m = _inv(h, "full-data Hessian")
    g = score_matrix(dataset.z, dataset.y, theta, family)
    return g @ m.T


def exact_v_sub(dataset: Dataset, probs: np.ndarray, theta: np.ndarray, family: Family | str) -> np.ndarray:
    """``N^-2 sum_i phi_i phi_i^T / pi_i``."""
    phi = influence(dataset, theta, family)
    probs = np.asarray(probs, dtype=float)
    probs = probs / probs.sum()
    N = dataset.N
    v = np.zeros((phi.shape[1],) * 2)
    for i in range(N):
        v += np.outer(phi[i], phi[i]) / probs[i]
    return v / N**2


def exact_v_str(dataset: Dataset, probs: np.ndarray, index_sets, theta: np.ndarray, family: Family | str) -> np.ndarray:
    """Stratified covariance, summed term by term.

    ``N^-2 sum_j sum_{i in I_j} (pi_i / Pi_j^2) [(Pi_j / pi_i) phi_i - sum_{I_j} phi]^{⊗2}``.
    """
    phi = influence(dataset, theta, family)
    probs = np.asarray(probs, dtype=float)
    probs = probs / probs.sum()
    N = dataset.N
    v = np.zeros((phi.shape[1],) * 2)
    for ix in index_sets:
        ix = np.asarray(ix)
        if ix.size == 0:
            continue
        pi_j = probs[ix].sum()
        total = phi[ix].sum(axis=0)
        for i in ix:
            dev = (pi_j / probs[i]) * phi[i] - total
            v += probs[i] / pi_j**2 * np.outer(dev, dev)
    return v / N**2


def stratification_gain(dataset: Dataset, probs: np.ndarray, index_sets, theta: np.ndarray, family: Family | str) -> np.ndarray:
    """Variance reduction from stratifying, built from conditional expectations.

    Under the sampling law ``Q(i) = pi_i`` let ``W`` take, on stratum ``j``, the
    value ``(P(A_j) / Q(A_j)) * E_P[phi | A_j]`` where ``P`` is the empirical
    (uniform) law of the rows. Returns ``Var_Q(W)``. At the full-data estimate
    this equals ``exact_v_sub - exact_v_str``.
    """
    phi = influence(dataset, theta, family)
    probs = np.asarray(probs, dtype=float)
    probs = probs / probs.sum()
    N = dataset.N
    q_mass, values = [], []
    for ix in index_sets:
        ix = np.asarray(ix)
        if ix.size == 0:
            continue
        p_mass = ix.size / N
        q = probs[ix].sum()
        cond_mean = phi[ix].mean(axis=0)
        q_mass.append(q)
        values.append(p_mass / q * cond_mean)
    q_mass = np.array(q_mass)
    values = np.array(values)
    mean = q_mass @ values
    centred = values - mean
    return (centred.T * q_mass) @ centred


def plug_in_estimate(
    draws,
    masses: np.ndarray,
    dataset: Dataset,
    theta_hat: np.ndarray,
    family: Family | str,
) -> CovEstimate:
    """Subsample-only covariance estimate ``V_hat = M_hat Phi_hat M_hat^T``.

    ``draws[j]`` holds the rows and realised probabilities drawn in stratum
    ``j`` and ``masses[j]`` its sampling mass. With ``Y = (Pi_j / pi*) l'``,
    ``Phi_hat = N^-2 sum_j (1 / Pi_j) * (within-stratum second central moment of Y)``
    and ``M_hat`` is the inverse of the inverse-probability weighted mean
    Hessian. The estimated MSE of the subsample estimator is
    ``trace(V_hat) / n``.

    ``masses`` cover every stratum and are renormalised to sum to one, so
    only ratios of probabilities matter.

    Strata with one draw have no within-stratum spread and add nothing to
    ``Phi_hat``; they are counted in ``singleton_strata``.
    """
    family = Family.parse(family)
    masses = np.asarray(masses, dtype=float)
    masses = masses / masses.sum()
    N = dataset.N
    d = dataset.d
    h_sum = np.zeros((d, d))
    phi = np.zeros((d, d))
    n = 0
    singletons = 0
    informative = 0
    for draw, pi_j in zip(draws, masses):
        nj = len(draw)
        if nj == 0:
            continue
        n += nj
        z = dataset.z[draw.indices]
        y = dataset.y[draw.indices]
        x = augment(z)
        eta = linear_predictor(z, theta_hat)
        mu, v = mean_and_variance(eta, family)
        ratio = pi_j / draw.realized_probs
        h_sum -= (x.T * (ratio * v)) @ x / nj
        if nj == 1:
            singletons += 1
            continue
        informative += 1
        yv = ratio[:, None] * ((y - mu)[:, None] * x)
        dev = yv - yv.mean(axis=0)
        phi += dev.T @ dev / (nj * pi_j)
    if informative == 0:
        raise DegenerateVariance("every stratum holds at most one draw")
    m_hat = _inv(h_sum / N, "subsample Hessian")
    phi /= N**2
    v_hat = m_hat @ phi @ m_hat.T
    v_hat = 0.5 * (v_hat + v_hat.T)
    return CovEstimate(v_hat, float(np.trace(v_hat)) / n, m_hat, phi, singletons, n)
