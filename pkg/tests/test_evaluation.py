import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from casecross.evaluation import (CurveDrawSet, ReplicationCurve, coverage_report, erl_envelope, erl_order,
                                  pointwise_interval, tidy_csv)


def test_constant_draws_interval():
    lo, hi, med = pointwise_interval(np.full((200, 5), 1.5))
    assert np.all(lo == 1.5) and np.all(hi == 1.5) and np.all(med == 1.5)


def test_normal_quantiles(rng):
    lo, hi, med = pointwise_interval(rng.normal(size=(100_000, 3)), 0.8)
    z = norm.ppf(0.9)
    assert z == pytest.approx(1.2816, abs=1e-4)
    assert np.all(np.abs(lo + z) < 0.02) and np.all(np.abs(hi - z) < 0.02)
    assert np.all(np.abs(med) < 0.02)


def test_interval_preconditions():
    with pytest.raises(ValueError):
        pointwise_interval(np.zeros((200, 2)), 1.0)
    with pytest.raises(ValueError):
        pointwise_interval(np.zeros((50, 2)), 0.8)


def test_drawset_validation():
    with pytest.raises(ValueError):
        CurveDrawSet(np.zeros((3, 2)), [1.0, 1.0])
    with pytest.raises(ValueError):
        CurveDrawSet(np.array([[0.0, np.nan]]), [0.0, 1.0])


def test_erl_equal_draws_give_that_curve():
    curve = np.array([0.1, -0.4, 2.0])
    env = erl_envelope(np.tile(curve, (600, 1)), 0.8)
    np.testing.assert_array_equal(env.lower, curve)
    np.testing.assert_array_equal(env.upper, curve)
    assert env.ordering == "erl"


def test_erl_nesting(rng):
    X = np.cumsum(rng.normal(size=(800, 25)), axis=1)
    small, big = erl_envelope(X, 0.5), erl_envelope(X, 0.9)
    assert np.all(big.lower <= small.lower) and np.all(small.upper <= big.upper)
    assert np.all(small.lower <= small.upper)


def test_erl_warns_on_few_draws(rng):
    with pytest.warns(UserWarning):
        erl_envelope(rng.normal(size=(100, 4)))


def test_erl_order_ranks_extremes_first():
    X = np.zeros((501, 3))
    X[:, 0] = np.arange(501)
    X[:, 1] = np.arange(501)[::-1]
    X[:, 2] = (np.arange(501) * 7) % 501
    order = erl_order(X)
    assert set(order[:2]) == {0, 500}


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-5, 5))
def test_erl_shift_invariance(seed, c):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(500, 8))
    shift = np.linspace(-1, 1, 8) * c
    np.testing.assert_array_equal(erl_order(X), erl_order(X + shift))


def test_erl_held_out_coverage_smoke(rng):
    # quick version of the calibration study; the full one is acceptance 8
    S, trials, hits = 2000, 300, 0
    for _ in range(trials):
        X = rng.normal(size=(S + 1, 10))
        env = erl_envelope(X[:S], 0.8)
        hits += env.contains(X[S])
    assert 0.70 < hits / trials < 0.88


def reps_from(truth, lower, upper, median):
    g = np.arange(len(truth), dtype=float)
    return [ReplicationCurve(g, np.full(len(g), 30), truth, m, lo, hi, lo, hi)
            for lo, hi, m in zip(lower, upper, median)]


def quiet_report(reps, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return coverage_report(reps, **kw)


def test_truth_always_inside():
    truth = np.zeros(6)
    r = quiet_report(reps_from(truth, [truth - 1] * 60, [truth + 1] * 60, [truth] * 60))
    assert np.all(r.pointwise_coverage == 1) and r.joint_coverage == 1


def test_zero_width_at_truth():
    truth = np.linspace(-1, 1, 5)
    r = quiet_report(reps_from(truth, [truth] * 60, [truth] * 60, [truth] * 60))
    assert np.all(r.pointwise_coverage == 1) and np.all(r.width == 0) and np.all(r.bias == 0)


def test_synthetic_normal_bands(rng):
    G, R, z = 10, 500, norm.ppf(0.9)
    truth = np.sin(np.arange(G))
    centre = truth + rng.normal(size=(R, G))
    r = quiet_report(reps_from(truth, centre - z, centre + z, centre))
    assert np.all((r.pointwise_coverage >= 0.75) & (r.pointwise_coverage <= 0.85))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_report_invariants(seed):
    rng = np.random.default_rng(seed)
    G, R = 7, 55
    truth = rng.normal(size=G)
    c = truth + rng.normal(0, 0.5, (R, G))
    w = rng.uniform(0, 1, (R, G))
    r = quiet_report(reps_from(truth, c - w, c + w, c))
    assert np.all((r.pointwise_coverage >= 0) & (r.pointwise_coverage <= 1))
    assert r.joint_coverage <= r.envelope_pointwise_coverage.min()
    assert np.all(r.width >= 0)
    neg = quiet_report(reps_from(-truth, -c - w, -c + w, -c))
    np.testing.assert_allclose(neg.bias, -r.bias)


def test_report_errors_and_warnings():
    truth = np.zeros(3)
    reps = reps_from(truth, [truth - 1] * 3, [truth + 1] * 3, [truth] * 3)
    with pytest.warns(UserWarning):
        coverage_report(reps)
    bad = reps + [ReplicationCurve(np.arange(4.0), np.zeros(4), np.zeros(4), *(np.zeros(4),) * 3)]
    with pytest.raises(ValueError):
        quiet_report(bad)
    with pytest.raises(ValueError):
        coverage_report([])


def test_tidy_csv_roundtrip():
    text = tidy_csv([(0.1, "bias", 1 / 3, "s")])
    assert text.splitlines() == ["grid,metric,value,scenario", f"0.1,bias,{1 / 3!r},s"]
    assert float(text.splitlines()[1].split(",")[2]) == 1 / 3
