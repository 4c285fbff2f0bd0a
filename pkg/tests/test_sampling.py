import numpy as np
import pytest

from mvrs import Dataset, DegenerateScores, InvalidInput, SingularHessian
from mvrs import draw_with_replacement, optimal_probs, uniform_probs
from mvrs.rng import stream
from mvrs.sampling import Scheme, mix_with_uniform, pilot_inverse_hessian

# N=3 logistic toy: z = (0.5, -1, 2), y = (1, 0, 1), pilot theta = (0.2, -0.4),
# M0 = inverse mean Hessian over the three rows. Probabilities evaluated with
# 40-digit mpmath arithmetic.
TOY_PROBS = [0.2067081560217444361347318, 0.4892363604836842338804706, 0.3040554834945713299847976]


def _toy():
    return Dataset(np.array([[0.5], [-1.0], [2.0]]), np.array([1.0, 0.0, 1.0])), np.array([0.2, -0.4])


def test_uniform_examples():
    np.testing.assert_array_equal(uniform_probs(4).probs, [0.25] * 4)
    np.testing.assert_array_equal(uniform_probs(1).probs, [1.0])
    assert uniform_probs(1000).probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert uniform_probs(3).scheme is Scheme.UNIFORM
    with pytest.raises(InvalidInput):
        uniform_probs(0)


def test_optimal_probs_toy_oracle():
    ds, th = _toy()
    m0 = pilot_inverse_hessian(ds.z, th, "logistic")
    plan = optimal_probs(ds, "logistic", th, m0)
    np.testing.assert_allclose(plan.probs, TOY_PROBS, rtol=0, atol=1e-12)
    assert plan.pilot_based and plan.scheme is Scheme.OPTIMAL


def test_optimal_probs_scale_free_in_m0():
    ds, th = _toy()
    m0 = pilot_inverse_hessian(ds.z, th, "logistic")
    a = optimal_probs(ds, "logistic", th, m0).probs
    b = optimal_probs(ds, "logistic", th, 2 * m0).probs
    np.testing.assert_allclose(a, b, rtol=1e-14)


def test_equal_norms_give_uniform():
    # intercept-only poisson with |y - mu| constant
    ds = Dataset(np.empty((4, 0)), np.array([0.0, 2.0, 0.0, 2.0]))
    th = np.array([0.0])
    plan = optimal_probs(ds, "poisson", th, np.array([[-1.0]]))
    np.testing.assert_allclose(plan.probs, 0.25, rtol=1e-15)


def test_optimal_probs_errors():
    ds = Dataset(np.empty((3, 0)), np.ones(3))
    with pytest.raises(DegenerateScores):
        optimal_probs(ds, "poisson", np.array([0.0]), np.array([[-1.0]]))
    with pytest.raises(SingularHessian):
        optimal_probs(ds, "poisson", np.array([0.0]), np.array([[np.inf]]))
    with pytest.raises(SingularHessian):
        pilot_inverse_hessian(np.ones((5, 1)), np.array([0.0, 0.0]), "poisson")


def test_zero_residual_rows_stay_reachable():
    ds = Dataset(np.empty((3, 0)), np.array([1.0, 0.0, 3.0]))
    plan = optimal_probs(ds, "poisson", np.array([0.0]), np.array([[-1.0]]))
    assert np.all(plan.probs > 0)
    assert plan.probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_min_prob_floor():
    ds, th = _toy()
    plan = optimal_probs(ds, "logistic", th, pilot_inverse_hessian(ds.z, th, "logistic"))
    assert mix_with_uniform(plan, 0.0) is plan
    mixed = mix_with_uniform(plan, 0.5)
    np.testing.assert_allclose(mixed.probs, 0.5 * np.array(TOY_PROBS) + 0.5 / 3, atol=1e-12)
    with pytest.raises(InvalidInput):
        mix_with_uniform(plan, 1.5)


def test_point_mass_and_empty_draws():
    d = draw_with_replacement([7], [1.0], 3, stream(0, "t"))
    np.testing.assert_array_equal(d.indices, [7, 7, 7])
    np.testing.assert_array_equal(d.realized_probs, [1.0, 1.0, 1.0])
    assert len(draw_with_replacement([1, 2], [0.5, 0.5], 0, stream(0, "t"))) == 0
    with pytest.raises(InvalidInput):
        draw_with_replacement([], [], 2, stream(0, "t"))
    with pytest.raises(InvalidInput):
        draw_with_replacement([1], [1.0], -1, stream(0, "t"))


def test_law_of_large_numbers():
    d = draw_with_replacement([10, 20, 30], [0.5, 0.3, 0.2], 10**6, stream(42, "lln"))
    freq = np.array([(d.indices == v).mean() for v in (10, 20, 30)])
    assert np.all(np.abs(freq - [0.5, 0.3, 0.2]) <= 0.002)


def test_realized_probs_are_exact_and_deterministic():
    rng = np.random.default_rng(0)
    probs = rng.random(500)
    idx = np.arange(1000, 1500)
    a = draw_with_replacement(idx, probs, 300, stream(9, "det"))
    b = draw_with_replacement(idx, probs, 300, stream(9, "det"))
    np.testing.assert_array_equal(a.indices, b.indices)
    np.testing.assert_array_equal(a.realized_probs, probs[a.indices - 1000])


def test_inverse_probability_weighting_is_unbiased():
    rng = np.random.default_rng(1)
    N, m, R = 50, 20, 10_000
    g = rng.normal(size=N)
    probs = rng.uniform(0.2, 1.0, N)
    probs /= probs.sum()
    gen = stream(3, "ipw")
    est = np.empty(R)
    for r in range(R):
        d = draw_with_replacement(np.arange(N), probs, m, gen)
        est[r] = np.mean(g[d.indices] / (N * d.realized_probs))
    z = (est.mean() - g.mean()) / (est.std(ddof=1) / np.sqrt(R))
    assert abs(z) < 4


def test_streams_are_labelled():
    a = stream(1, "draw", 0, 3).random(4)
    np.testing.assert_array_equal(a, stream(1, "draw", 0, 3).random(4))
    assert not np.array_equal(a, stream(1, "draw", 0, 4).random(4))
    assert not np.array_equal(a, stream(1, "pilot", 0).random(4))
