import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from casecross.basis import LEFT_KNOTS, RIGHT_KNOTS, TwoSidedBasis, bspline_basis, clamp_knots, default_coefficients
from casecross.likelihood import poisson_lognormal_variance
from casecross.simgen import (DEFAULT_COEFFICIENTS, SIGMA0_LEVELS, ExposureCurveSpec, GenConfig, Truth, TrendSpec,
                              eval_exposure_curve, generate_series, lagged_average, replication_seeds,
                              resolve_sigma0)


def de_boor_basis(x, t, p, i):
    """Cox-de Boor recursion for basis function i (right-closed at the last knot)."""
    if p == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        if x == t[-1] and t[i] < t[i + 1] == t[-1]:
            return 1.0
        return 0.0
    out = 0.0
    if t[i + p] > t[i]:
        out += (x - t[i]) / (t[i + p] - t[i]) * de_boor_basis(x, t, p - 1, i)
    if t[i + p + 1] > t[i + 1]:
        out += (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * de_boor_basis(x, t, p - 1, i + 1)
    return out


@pytest.mark.parametrize("knots", [LEFT_KNOTS, RIGHT_KNOTS])
def test_basis_matches_de_boor(knots, rng):
    t = clamp_knots(knots)
    x = rng.uniform(t[0], t[-1], 100)
    B = bspline_basis(x, t)
    n = len(t) - 4
    ref = np.array([[de_boor_basis(xi, t, 3, i) for i in range(n)] for xi in x])
    np.testing.assert_allclose(B, ref, atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.2, 102.0))
def test_partition_of_unity_each_side(x):
    left, right = TwoSidedBasis().side_bases(np.array([x]))
    side = left if x < 20 else right
    assert side.sum() == pytest.approx(1.0, abs=1e-12)


def test_curve_pinned_at_reference():
    assert eval_exposure_curve(np.array([20.0]))[0] == 0.0
    assert TwoSidedBasis().design(np.array([20.0])).sum() == 0.0


def test_default_curve_shape():
    x = np.linspace(-0.2, 102, 2001)
    f = eval_exposure_curve(x)
    assert np.all(np.diff(f) > 0)
    assert np.all(np.diff(f, 2) < 1e-12)
    assert eval_exposure_curve(np.array([0.0]))[0] == pytest.approx(-0.5, abs=0.01)
    assert eval_exposure_curve(np.array([102.0]))[0] == pytest.approx(0.9, abs=0.01)
    # continuity across the reference
    assert abs(eval_exposure_curve(np.array([20 - 1e-9]))[0]) < 1e-8


def test_stored_coefficients_reproduce_construction():
    np.testing.assert_allclose(default_coefficients(), DEFAULT_COEFFICIENTS, atol=5e-7)


def test_curve_rejects_unset_coefficients():
    with pytest.raises(ValueError):
        eval_exposure_curve(np.array([1.0]), ExposureCurveSpec(coefficients=None))


def test_sigma0_keywords():
    assert resolve_sigma0("strong") == pytest.approx(math.exp(-1.75))
    assert resolve_sigma0("moderate") == pytest.approx(math.exp(-3.5))
    assert resolve_sigma0("none") == 0.0
    assert SIGMA0_LEVELS["strong"] == pytest.approx(0.1738, abs=1e-4)
    with pytest.raises(ValueError):
        resolve_sigma0("huge")
    with pytest.raises(ValueError):
        resolve_sigma0(-0.1)


def flat(intercept):
    return TrendSpec(kind="none", intercept=intercept)


def zero_curve():
    return ExposureCurveSpec(multiplier=0.0)


def test_mean_matches_intercept():
    T = 100_000
    s, _ = generate_series(GenConfig(T=T, dow_effects=(0,) * 7, seed=3), flat(math.log(10)), zero_curve())
    assert abs(s.Y.mean() - 10) < 3 * math.sqrt(10 / T)


def test_unit_poisson_dispersion():
    T = 100_000
    s, _ = generate_series(GenConfig(T=T, dow_effects=(0,) * 7, seed=4), flat(0.0), zero_curve())
    ratio = s.Y.var(ddof=1) / s.Y.mean()
    # var/mean of Poisson(1) has sd about sqrt(2 / T)
    assert abs(ratio - 1) < 3 * math.sqrt(2 / T)


def test_overdispersed_variance_matches_formula():
    T, s0, mu = 100_000, SIGMA0_LEVELS["strong"], math.log(10)
    s, _ = generate_series(GenConfig(T=T, dow_effects=(0,) * 7, sigma0="strong", seed=5), flat(mu), zero_curve())
    Y = s.Y
    assert Y.var(ddof=1) / Y.mean() > 1
    E = math.exp(mu + s0 ** 2 / 2)  # realised mean E(Y | eta tilde)
    m4 = np.mean((Y - Y.mean()) ** 4)
    se = math.sqrt((m4 - Y.var() ** 2) / T)
    assert abs(Y.var(ddof=1) - poisson_lognormal_variance(E, s0)) < 3 * se


def test_dow_recovery():
    T = 7 * 20_000
    dow = (0, 0.2, 0.3, 0.3, 0.25, 0.2, 0.05)
    s, _ = generate_series(GenConfig(T=T, seed=6), flat(math.log(20)), zero_curve())
    for d in range(1, 7):
        a, b = s.Y[s.weekday == d], s.Y[s.weekday == 0]
        est = math.log(a.mean() / b.mean())
        se = math.sqrt(1 / a.sum() + 1 / b.sum())
        assert abs(est - dow[d]) < 3 * se


def test_reproducible_and_truth_roundtrip():
    cfg = GenConfig(T=500, sigma0="moderate", seed=11)
    s1, t1 = generate_series(cfg, TrendSpec("rough"))
    s2, _ = generate_series(cfg, TrendSpec("rough"))
    np.testing.assert_array_equal(s1.Y, s2.Y)
    np.testing.assert_allclose(t1.recompute_log_mean(), t1.log_mean, atol=1e-12)
    back = Truth.from_dict(t1.to_dict())
    np.testing.assert_allclose(back.log_mean, t1.log_mean, atol=1e-12)
    np.testing.assert_allclose(back.curve(np.array([5.0, 50.0])), t1.curve(np.array([5.0, 50.0])))


def test_overflow_rejected():
    with pytest.raises(ValueError, match="log-mean"):
        generate_series(GenConfig(T=50), flat(31.0))


def test_exposure_series_shape():
    pm = GenConfig().exposure.generate(2016)
    assert pm.min() > 0 and pm.max() <= 102
    assert 10 < pm.mean() < 25


def test_replication_seeds_distinct():
    s = replication_seeds(1, 50)
    assert len(set(s)) == 50 and s == replication_seeds(1, 50)


def test_lagged_average_examples():
    x = np.array([1.0, 3.0, 5.0])
    np.testing.assert_array_equal(lagged_average(x, 1), x)
    out = lagged_average(x, 2)
    assert np.isnan(out[0]) and out[1:].tolist() == [2.0, 4.0]
    t = np.arange(1.0, 21.0)
    np.testing.assert_allclose(lagged_average(t, 4)[3:], t[3:] - 1.5)
    with pytest.raises(ValueError):
        lagged_average(x, 0)
