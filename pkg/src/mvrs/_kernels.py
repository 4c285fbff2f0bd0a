"""Compiled single-pass loops for the O(N) steps of the stratified pipeline.

Each kernel touches every row once, in row order, so its cost does not depend
on the number of strata.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def glm_scores(z, y, theta, c, poisson):
    """``s_i = (y_i - mu_i) * (c0 + c1 . z_i)`` with ``eta_i = theta0 + theta1 . z_i``.

    Returns ``(s, max_eta, first_bad)`` where ``first_bad`` is the first row with
    a non-finite score, or -1.
    """
    N, p = z.shape
    s = np.empty(N)
    max_eta = -np.inf
    first_bad = -1
    for i in range(N):
        eta = theta[0]
        proj = c[0]
        for j in range(p):
            eta += z[i, j] * theta[j + 1]
            proj += z[i, j] * c[j + 1]
        if eta > max_eta:
            max_eta = eta
        if poisson:
            mu = np.exp(eta)
        elif eta >= 0:
            mu = 1.0 / (1.0 + np.exp(-eta))
        else:
            e = np.exp(eta)
            mu = e / (1.0 + e)
        v = (y[i] - mu) * proj
        if first_bad < 0 and not np.isfinite(v):
            first_bad = i
        s[i] = v
    return s, max_eta, first_bad


@njit(cache=True)
def bin_scores(scores, lo, scale, n_bins):
    """Bin ``1 + clip((s - lo) * scale, -1, n_bins - 2)`` of every score, and bin counts."""
    N = scores.shape[0]
    bins = np.empty(N, np.int32)
    counts = np.zeros(n_bins, np.int64)
    top = n_bins - 2.0
    for i in range(N):
        t = (scores[i] - lo) * scale
        if t < -1.0:
            t = -1.0
        elif t > top:
            t = top
        b = np.int32(t + 1.0)
        bins[i] = b
        counts[b] += 1
    return bins, counts


@njit(cache=True)
def label_bins(bins, bin_label, bin_split, n_split):
    """Per-row label from its bin, plus the rows whose bin straddles a cut."""
    N = bins.shape[0]
    labels = np.empty(N, bin_label.dtype)
    rows = np.empty(n_split, np.int64)
    t = 0
    for i in range(N):
        b = bins[i]
        labels[i] = bin_label[b]
        if bin_split[b]:
            rows[t] = i
            t += 1
    return labels, rows


@njit(cache=True)
def stratum_stats(labels, scores, k):
    """Row count and largest score of each stratum."""
    sizes = np.zeros(k, np.int64)
    maxes = np.full(k, -np.inf)
    for i in range(labels.shape[0]):
        l = labels[i]
        sizes[l] += 1
        if scores[i] > maxes[l]:
            maxes[l] = scores[i]
    return sizes, maxes


@njit(cache=True)
def stratum_totals(labels, probs, k):
    """Running within-stratum sum of ``probs`` in row order, final value per stratum."""
    acc = np.zeros(k)
    for i in range(labels.shape[0]):
        acc[labels[i]] += probs[i]
    return acc


@njit(cache=True)
def inverse_cdf_rows(labels, probs, k, u_sorted, u_offsets):
    """Resolve sorted uniforms against each stratum's cumulative distribution.

    ``u_sorted[u_offsets[j]:u_offsets[j+1]]`` are ascending targets on the
    scale of stratum ``j``'s total mass. Each target maps to the first row of
    its stratum (in row order) whose running mass exceeds it; targets at or
    beyond the total map to the stratum's last row.
    """
    acc = np.zeros(k)
    ptr = u_offsets[:-1].copy()
    last = np.full(k, -1, np.int64)
    out = np.empty(u_sorted.shape[0], np.int64)
    for i in range(labels.shape[0]):
        l = labels[i]
        last[l] = i
        acc[l] += probs[i]
        stop = u_offsets[l + 1]
        t = ptr[l]
        while t < stop and u_sorted[t] < acc[l]:
            out[t] = i
            t += 1
        ptr[l] = t
    for l in range(k):
        for t in range(ptr[l], u_offsets[l + 1]):
            out[t] = last[l]
    return out
