"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line (also collected in the terminal
summary). Criterion 5 runs at N = 10^6 and is skipped unless
``MVRS_FULL_SCALE=1`` is set.
"""

import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from mvrs import Dataset, exact_v_str, exact_v_sub, full_fit, hessian, loglik, partition_equal_count, score
from mvrs.simgen import SimConfig, generate_dataset, run_experiment, time_methods
from mvrs.stratify import PARTITION_METHODS
from mvrs.variance import stratification_gain

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _config(name, **overrides) -> SimConfig:
    d = json.loads((CONFIGS / f"{name}.json").read_text())
    d.update(overrides)
    return SimConfig.from_dict(d)


def _min_eig(a):
    return float(np.linalg.eigvalsh(0.5 * (a + a.T)).min())


def _instance(rng):
    """Random small GLM dataset at its full-data estimate, with random valid probabilities."""
    family = ("logistic", "poisson")[int(rng.integers(2))]
    N = int(rng.integers(50, 501))
    p = int(rng.choice([1, 4]))  # d = p + 1 in {2, 5}
    z = rng.normal(size=(N, p))
    eta = 0.2 + z @ rng.uniform(-0.5, 0.5, p)
    if family == "logistic":
        y = (rng.random(N) < 1 / (1 + np.exp(-eta))).astype(float)
    else:
        y = rng.poisson(np.exp(eta)).astype(float)
    ds = Dataset(z, y)
    theta = full_fit(ds, family).theta_hat
    probs = rng.exponential(size=N) + 0.01
    return ds, family, theta, probs / probs.sum()


def _sort_oracle(scores, k):
    N = scores.shape[0]
    order = np.lexsort((np.arange(N), scores))
    rank = np.empty(N, dtype=np.int64)
    rank[order] = np.arange(N)
    return np.searchsorted((np.arange(1, k) * N) // k, rank, side="right")


def test_criterion_01_psd_ordering(report_criterion):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = np.inf
    families = set()
    for _ in range(200):
        ds, fam, th, probs = _instance(rng)
        families.add(fam)
        k = int(rng.choice([2, 5, 10]))
        sets = partition_equal_count(rng.normal(size=ds.N), k).index_sets
        worst = min(worst, _min_eig(exact_v_sub(ds, probs, th, fam) - exact_v_str(ds, probs, sets, th, fam)))
    elapsed = time.perf_counter() - t0
    ok = worst >= -1e-10 and elapsed < 60 and families == {"logistic", "poisson"}
    assert report_criterion(1, ok, f"min eig(V_sub - V_str) = {worst:.3e} over 200 instances in {elapsed:.1f}s")


def test_criterion_02_difference_identity(report_criterion):
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(50):
        ds, fam, th, probs = _instance(rng)
        k = int(rng.choice([2, 5, 10]))
        sets = partition_equal_count(rng.normal(size=ds.N), k).index_sets
        diff = exact_v_sub(ds, probs, th, fam) - exact_v_str(ds, probs, sets, th, fam)
        worst = max(worst, float(np.max(np.abs(diff - stratification_gain(ds, probs, sets, th, fam)))))
    assert report_criterion(2, worst <= 1e-10, f"max |(V_sub - V_str) - Var_Q(dP/dQ E[phi|A])| = {worst:.3e}")


def test_criterion_03_refinement_monotone(report_criterion):
    rng = np.random.default_rng(303)
    worst = np.inf
    for _ in range(50):
        ds, fam, th, probs = _instance(rng)
        k = int(rng.choice([2, 5, 10]))
        coarse = partition_equal_count(rng.normal(size=ds.N), k).index_sets
        fine = []
        for ix in coarse:
            # split each stratum into up to three random nonempty parts
            cuts = np.sort(rng.choice(np.arange(1, len(ix)), size=min(2, len(ix) - 1), replace=False))
            fine += [np.sort(part) for part in np.split(rng.permutation(ix), cuts)]
        v_c = exact_v_str(ds, probs, coarse, th, fam)
        v_f = exact_v_str(ds, probs, fine, th, fam)
        worst = min(worst, _min_eig(v_c - v_f))
    assert report_criterion(3, worst >= -1e-10, f"min eig(V_str(coarse) - V_str(refined)) = {worst:.3e} over 50 pairs")


@pytest.mark.slow
def test_criterion_04_table1_orderings(report_criterion):
    cfg = _config("table1")
    t0 = time.perf_counter()
    rep = run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    problems, lines = [], []
    for n in cfg.n:
        mse = {m: rep.cell(m, n).mse for m in cfg.methods}
        r_u = mse["mvrs-u"] / mse["optmvrs-u"]
        r_o = mse["mvrs-o"] / mse["optmvrs-o"]
        lines.append(f"n={n}: UNIF {mse['unif']:.5f} MVRS-U {mse['mvrs-u']:.5f} OPT {mse['opt']:.5f} "
                     f"MVRS-O {mse['mvrs-o']:.5f} ratios U {r_u:.3f} O {r_o:.3f}")
        if not mse["mvrs-u"] < mse["unif"]:
            problems.append(f"MVRS-U >= UNIF at n={n}")
        if not mse["mvrs-o"] < mse["opt"]:
            problems.append(f"MVRS-O >= OPT at n={n}")
        for name, r in (("U", r_u), ("O", r_o)):
            if not 0.85 <= r <= 1.15:
                problems.append(f"MVRS-{name}/optMVRS-{name} = {r:.3f} at n={n}")
    if not rep.valid:
        problems.append("failure budget exceeded")
    print("\n".join(lines))
    detail = "; ".join(problems) if problems else f"orderings and ratios hold at every n ({elapsed:.0f}s)"
    assert report_criterion(4, not problems and elapsed < 900, detail)


@pytest.mark.slow
def test_criterion_05_full_scale(report_criterion):
    if os.environ.get("MVRS_FULL_SCALE") != "1":
        report_criterion(5, None, "set MVRS_FULL_SCALE=1 to run the N=10^6 spot check")
        pytest.skip("full-scale check disabled")
    cfg = _config("table1", N=1_000_000, n=[500], methods=["unif", "mvrs-u"])
    t0 = time.perf_counter()
    rep = run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    u, m = rep.cell("unif", 500).mse, rep.cell("mvrs-u", 500, 30).mse
    ok = 0.0035 <= u <= 0.0060 and 0.75 <= m / u <= 0.95 and elapsed < 1800 and rep.valid
    assert report_criterion(5, ok, f"MSE(UNIF) = {u:.5f}, MSE(MVRS-U)/MSE(UNIF) = {m / u:.3f} ({elapsed:.0f}s)")


@pytest.mark.slow
def test_criterion_06_strata_count(report_criterion):
    cfg = _config("strata_count")
    rep = run_experiment(cfg)
    mse = [rep.cell("mvrs-u", 1000, k).mse for k in cfg.k]
    steps_ok = all(b <= 1.1 * a for a, b in zip(mse, mse[1:]))
    ok = mse[-1] <= 0.95 * mse[0] and steps_ok and rep.valid
    seq = ", ".join(f"k={k}: {v:.5f}" for k, v in zip(cfg.k, mse))
    assert report_criterion(6, ok, f"MSE by k {seq}")


@pytest.mark.slow
def test_criterion_07_mse_estimation(report_criterion):
    cfg = _config("mse_estimation")
    rep = run_experiment(cfg)
    c = rep.cell("mvrs-u", 1000, 10)
    rel = c.mean_mse_hat / c.mse - 1
    ok = abs(rel) <= 0.20 and rep.valid
    assert report_criterion(7, ok, f"mean(mse_hat) {c.mean_mse_hat:.5f} vs empirical {c.mse:.5f} ({rel:+.1%})")


def test_criterion_08_partition_matches_sort(report_criterion):
    rng = np.random.default_rng(808)
    mismatches = 0
    for t in range(100):
        N = int(rng.integers(1, 100_001)) if t % 4 else int(rng.integers(1, 200))
        kind = t % 3
        if kind == 0:
            s = rng.normal(size=N)
        elif kind == 1:
            s = np.round(rng.normal(size=N), 1)  # heavy ties
        else:
            s = rng.standard_cauchy(N) ** 3
        k = int(rng.integers(1, min(100, N) + 1))
        want = _sort_oracle(s, k)
        want_sets = [np.flatnonzero(want == j) for j in range(k)]
        for method in PARTITION_METHODS:
            got = partition_equal_count(s, k, method).index_sets
            if len(got) != k or not all(np.array_equal(a, b) for a, b in zip(got, want_sets)):
                mismatches += 1
    assert report_criterion(8, mismatches == 0,
                            f"{mismatches} mismatching index sets over 100 vectors x {len(PARTITION_METHODS)} methods")


def _fd(f, x, h=1e-6):
    out = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        out.append((f(x + e) - f(x - e)) / (2 * h))
    return np.array(out)


def test_criterion_09_finite_differences(report_criterion):
    rng = np.random.default_rng(909)
    worst_g = worst_h = 0.0
    for family in ("logistic", "poisson"):
        for _ in range(100):
            p = int(rng.integers(1, 6))
            z = rng.normal(size=p)
            th = rng.normal(scale=0.5, size=p + 1)
            y = float(rng.integers(0, 2)) if family == "logistic" else float(rng.poisson(2.0))
            g = score(z, y, th, family)
            fd_g = _fd(lambda t: loglik(z, y, t, family), th)
            worst_g = max(worst_g, np.max(np.abs(g - fd_g)) / max(np.max(np.abs(fd_g)), 1e-3))
            h = hessian(z, y, th, family)
            fd_h = _fd(lambda t: score(z, y, t, family), th)
            worst_h = max(worst_h, np.max(np.abs(h - fd_h)) / max(np.max(np.abs(fd_h)), 1e-3))
    ok = worst_g <= 1e-5 and worst_h <= 1e-4
    assert report_criterion(9, ok, f"max rel error gradient {worst_g:.2e} (tol 1e-5), Hessian {worst_h:.2e} (tol 1e-4)")


@pytest.mark.slow
def test_criterion_10_performance(report_criterion):
    cfg = _config("timing")
    ds = generate_dataset(cfg.family, cfg.case, cfg.N, cfg.theta_true, cfg.seed)
    t = time_methods(ds, cfg, repeats=21, warmup=2)
    unif = t["unif"]["total"]
    per_k = {k: t[f"mvrs-u@k={k}"]["total"] for k in cfg.k}
    ratio = max(per_k.values()) / unif
    spread = max(per_k.values()) / min(per_k.values())
    times = ", ".join(f"k={k}: {v:.1f}ms" for k, v in per_k.items())
    ok = ratio <= 3 and spread <= 1.2
    assert report_criterion(10, ok, f"UNIF {unif:.1f}ms, MVRS-U {times}; worst ratio {ratio:.2f} (<= 3), "
                                    f"spread across k {spread:.2f} (<= 1.2)")


def test_criterion_11_determinism(report_criterion, tmp_path):
    cfg = tmp_path / "det.json"
    cfg.write_text(json.dumps({"family": "poisson", "case": 1, "N": 20_000, "n": [300, 600], "n0": 150,
                               "k": [5, 30], "R": 20, "seed": 77}))
    outs = []
    for run in ("a", "b"):
        out = tmp_path / f"{run}.json"
        subprocess.run([sys.executable, "-m", "mvrs.cli", "simulate", "--config", str(cfg), "--n-jobs", "1",
                        "--no-timing", "--out", str(out)], check=True)
        outs.append(out.read_bytes())
    same = outs[0] == outs[1]
    assert report_criterion(11, same, f"two simulate runs {'are' if same else 'are NOT'} byte-identical "
                                      f"({len(outs[0])} bytes)")
