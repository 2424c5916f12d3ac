import numpy as np

from casecross.experiments import ModelRun, StudyConfig, run_study, rw2_model, spline_model


def test_small_study_is_reproducible():
    runs = {"std": ModelRun(spline_model(False)), "rw2": ModelRun(rw2_model(True, sd_prior_median=0.01),
                                                                  envelope=False)}
    cfg = StudyConfig(replications=3, T=280, sigma0="strong", seed=4)
    a, b = run_study(cfg, runs), run_study(cfg, runs)
    for name in runs:
        assert a[name].n_replications == 3
        np.testing.assert_array_equal(a[name].pointwise_coverage, b[name].pointwise_coverage)
        np.testing.assert_array_equal(a[name].bias, b[name].bias)
        assert np.all((a[name].pointwise_coverage >= 0) & (a[name].pointwise_coverage <= 1))
    assert a["std"].joint_coverage is not None
    assert a["rw2"].joint_coverage is None


def test_bias_vanishes_next_to_reference():
    rep = run_study(StudyConfig(replications=1, T=200, seed=2), {"m": ModelRun(spline_model(True))})["m"]
    np.testing.assert_allclose(np.diff(rep.grid), 1.0)
    # truth and fit are both pinned to 0 at the reference, half a grid step away
    i = np.argmin(np.abs(rep.grid - 20.0))
    assert abs(rep.grid[i] - 20.0) == 0.5
    assert abs(rep.bias[i]) < 0.05
