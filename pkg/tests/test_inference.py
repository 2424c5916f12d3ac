import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import logsumexp
from scipy.stats import chisquare, multivariate_normal

from casecross.frames import build_time_stratified
from casecross.inference import (FitOptions, HyperPosterior, InferenceError, InnerConvergenceError, InnerModeResult,
                                 LaplaceMarginal, LatentGaussianModel, aghq_grid, fit, gauss_hermite, inner_optimize,
                                 laplace_log_marginal, sample_latent)
from casecross.latent import LatentStructure, ModelSpec, PriorSpec, Rw2EffectSpec, build_structure
from casecross.likelihood import ConditionalPoisson, DailySeries, GaussianLikelihood
from casecross.linalg import ArrowCholesky
from casecross.simgen import GenConfig, TrendSpec, generate_series

from conftest import toy_model, toy_series


def gaussian_model(rng, T=50):
    series = toy_series(rng, T)
    st = build_structure(series, toy_model())
    y = rng.normal(0, 1, T)
    return LatentGaussianModel(GaussianLikelihood(y, precision=2.0), st), y


def exact_gaussian_log_marginal(model, y, theta):
    st = model.s
    J = sp.hstack([st.design, sp.identity(st.T)]).toarray()
    P = st.full_precision(theta).toarray()
    cov = J @ np.linalg.inv(P) @ J.T + np.eye(st.T) / model.lik.precision
    return multivariate_normal(np.zeros(st.T), cov).logpdf(y) + st.hyper_logprior(theta)


def test_gaussian_newton_one_step(rng):
    model, _ = gaussian_model(rng)
    r = inner_optimize(np.array([1.0, 3.0]), model)
    assert r.n_iter == 1
    assert r.grad_max < 1e-8
    H = model.neg_hessian(r.W, r.theta)
    np.testing.assert_allclose(H @ r.W, model.gradient(np.zeros(model.dim), r.theta), atol=1e-9)


@pytest.mark.parametrize("theta", [[0.0, 0.0], [2.0, 5.0], [-1.0, 8.0]])
def test_laplace_exact_on_gaussian(rng, theta):
    model, y = gaussian_model(rng)
    theta = np.array(theta)
    assert abs(laplace_log_marginal(theta, model) - exact_gaussian_log_marginal(model, y, theta)) < 1e-8


def test_inner_mode_gradient_and_monotone(toy):
    lik, st, _, _ = toy
    model = LatentGaussianModel(lik, st)
    r = inner_optimize(np.array([4.0, 3.0]), model)
    assert r.grad_max < 1e-8 or np.max(np.abs(model.gradient(r.W, r.theta))) < 1e-6
    # accepted steps never lower the log joint beyond rounding noise
    tr = np.array(r.trace)
    assert np.all(np.diff(tr) >= -64 * np.finfo(float).eps * np.abs(tr[1:]))


def test_inner_mode_t100(rng):
    series = toy_series(rng, 100)
    frames = build_time_stratified(100, 28)
    model = LatentGaussianModel(ConditionalPoisson(series.Y, frames), build_structure(series, toy_model()))
    r = inner_optimize(np.array([5.0, 4.0]), model)
    assert r.grad_max < 1e-8


def dim15_model():
    rng = np.random.default_rng(5)
    T = 60
    X = rng.normal(0, 1, (T, 2))
    Y = rng.poisson(20 * np.exp(X @ np.array([0.3, -0.2])))
    series = DailySeries(Y, {"pm": rng.gamma(4, 4, T), "temp": X[:, 0]})
    spec = Rw2EffectSpec("pm", 2.4, 16.0, sd_prior_median=0.1)
    st = build_structure(series, ModelSpec(fixed_effects=["temp"], rw2=[spec], overdispersion=False))
    return LatentGaussianModel(ConditionalPoisson(Y, build_time_stratified(T, 28)), st)


def test_mode_matches_derivative_free_optimizer():
    model = dim15_model()
    assert model.dim == 15
    th = np.array([2.0])
    r = inner_optimize(th, model)
    o = minimize(lambda w: -model.log_joint(w, th), np.zeros(15), method="Powell",
                 options={"xtol": 1e-12, "ftol": 1e-15, "maxfev": 200_000})
    assert np.max(np.abs(o.x - r.W)) < 1e-5


def test_inner_failure_carries_diagnostics():
    model = dim15_model()
    with pytest.raises(InnerConvergenceError) as info:
        inner_optimize(np.array([2.0]), model, max_iter=1)
    assert info.value.stage == "inner"
    assert "grad_max" in info.value.diagnostics


def test_laplace_shift_invariance(toy):
    lik, st, _, _ = toy
    model = LatentGaussianModel(lik, st)
    theta = np.array([4.0, 3.0])
    base = laplace_log_marginal(theta, model)

    class Shifted:
        T, hess_rows, hess_cols = lik.T, lik.hess_rows, lik.hess_cols

        def value(self, eta):
            return lik.value(eta) + 7.25

        def grad(self, eta):
            return lik.grad(eta)

        def curvature(self, eta):
            return lik.curvature(eta)

    shifted = laplace_log_marginal(theta, LatentGaussianModel(Shifted(), st))
    assert shifted - base == pytest.approx(7.25, abs=1e-9)


def two_coef_model():
    rng = np.random.default_rng(5)
    T = 60
    X = rng.normal(0, 1, (T, 2))
    Y = rng.poisson(20 * np.exp(X @ np.array([0.3, -0.2])))
    st = LatentStructure(T=T, n_beta=0, n_gamma=2, has_z=False, design=sp.csr_matrix(X), names=["a", "b"],
                         prior_blocks=[(slice(0, 2), sp.identity(2, format="csr"), 0)], priors=PriorSpec(),
                         sd_medians=[0.5], logdet_base=[0.0])
    return LatentGaussianModel(ConditionalPoisson(Y, build_time_stratified(T, 28)), st)


def grid_log_joint(model, theta, W):
    """log joint at the columns of W (2 x N), vectorised over the grid."""
    lik = model.lik
    eta = model.s.design @ W
    E = np.where(lik.mask[:, :, None], eta[lik.idx], -np.inf)
    lse = logsumexp(E, axis=1)
    ll = lik.y_framed @ eta - lik.ybar @ lse
    t = float(theta[0])
    return ll - 0.5 * math.exp(t) * np.sum(W ** 2, axis=0) + t - math.log(2 * math.pi)


def test_laplace_shape_matches_dense_grid():
    model = two_coef_model()
    th = np.array([1.0])
    w = np.array([[0.1, -0.3], [0.2, 0.05]])
    np.testing.assert_allclose(grid_log_joint(model, th, w), [model.log_joint(c, th) for c in w.T], atol=1e-9)
    thetas = np.linspace(-2, 6, 9)
    la, ex = [], []
    for t in thetas:
        th = np.array([t])
        la.append(laplace_log_marginal(th, model))
        r = inner_optimize(th, model)
        sd = np.sqrt(np.diag(np.linalg.inv(model.neg_hessian(r.W, th))))
        g = np.linspace(-8, 8, 401)
        G1, G2 = np.meshgrid(r.W[0] + g * sd[0], r.W[1] + g * sd[1], indexing="ij")
        lj = grid_log_joint(model, th, np.vstack([G1.ravel(), G2.ravel()]))
        ex.append(logsumexp(lj) + math.log((g[1] - g[0]) ** 2 * sd[0] * sd[1]) + model.s.hyper_logprior(th))
    p_la = np.exp(np.array(la) - logsumexp(la))
    p_ex = np.exp(np.array(ex) - logsumexp(ex))
    assert np.max(np.abs(p_la / p_ex - 1)) < 1e-3


def test_gauss_hermite_integrates_normal_times_polynomials():
    for k in (1, 3, 5, 7):
        z, logw = gauss_hermite(k)
        phi = np.exp(-0.5 * z ** 2) / math.sqrt(2 * math.pi)
        for deg in range(2 * k):
            exact = 0.0 if deg % 2 else float(np.prod(np.arange(deg - 1, 0, -2))) if deg else 1.0
            assert np.sum(np.exp(logw) * phi * z ** deg) == pytest.approx(exact, abs=1e-9)


def test_aghq_single_node():
    hp = aghq_grid(lambda t: -0.5 * float(t @ t), 2, k=1, theta_hat=np.zeros(2))
    assert hp.nodes.shape == (1, 2) and hp.masses.tolist() == [1.0]


def test_aghq_exact_for_gaussian():
    A = np.array([[2.0, 0.6], [0.6, 1.0]])
    m = np.array([0.7, -1.2])
    c = 3.3

    def f(t):
        d = t - m
        return c - 0.5 * float(d @ A @ d)

    hp = aghq_grid(f, 2, k=3)
    z1, lw1 = gauss_hermite(3)
    w1 = np.exp(lw1) * np.exp(-0.5 * z1 ** 2)
    np.testing.assert_allclose(np.sort(hp.masses), np.sort(np.outer(w1, w1).ravel() / w1.sum() ** 2), atol=1e-8)
    assert np.max(np.abs(hp.mean() - hp.theta_hat)) < 1e-10
    assert np.max(np.abs(hp.theta_hat - m)) < 1e-5
    assert hp.log_norm == pytest.approx(c + math.log(2 * math.pi) - 0.5 * math.log(np.linalg.det(A)), abs=1e-6)
    assert abs(hp.masses.sum() - 1) < 1e-12 and np.all(hp.masses >= 0)
    assert hp.nodes.shape == (9, 2)
    # invariant up to finite-difference roundoff in the curvature
    shifted = aghq_grid(lambda t: f(t) + 50.0, 2, k=3, theta_hat=hp.theta_hat)
    np.testing.assert_allclose(shifted.masses, hp.masses, rtol=1e-5)
    assert shifted.log_norm - hp.log_norm == pytest.approx(50.0, abs=1e-5)


def test_aghq_rejects_non_pd_curvature():
    with pytest.raises(InferenceError):
        aghq_grid(lambda t: 0.5 * float(t @ t), 1, k=3, theta_hat=np.zeros(1))


def riemann_tv(T=200, seed=2):
    series, _ = generate_series(GenConfig(T=T, seed=seed), TrendSpec("smooth"))
    frames = build_time_stratified(T, 28)
    st = build_structure(series, ModelSpec(rw2=[Rw2EffectSpec("pm", 5.0, 20.0)], overdispersion=False))
    lm = LaplaceMarginal(LatentGaussianModel(ConditionalPoisson(series.Y, frames), st))
    hp = aghq_grid(lm, 1, k=7, theta_init=np.array([9.0]))
    sd = float(hp.L[0, 0])
    grid = hp.theta_hat[0] + np.linspace(-6, 6, 4001) * sd
    logv = np.array([lm(np.array([t])) for t in grid])
    h = grid[1] - grid[0]
    p_riemann = np.exp(logv - logsumexp(logv)) / h
    p_aghq = np.exp(hp.log_density(logv))
    return 0.5 * np.sum(np.abs(p_riemann - p_aghq)) * h


def test_aghq_against_riemann_grid():
    assert riemann_tv() < 0.02


def mixture_hp(masses, means):
    n = len(masses)
    z = np.zeros((n, 1))
    return HyperPosterior(np.zeros(1), np.eye(1), np.eye(1), z, z, np.zeros(n), np.zeros(n), np.asarray(masses),
                          0.0, n)


def inner_at(mean, var=1.0):
    return InnerModeResult(np.zeros(1), np.array([mean]), 0.0, ArrowCholesky(A=np.array([[1.0 / var]])), 1, 0.0)


def test_two_node_mixture_mean():
    S = 100_000
    d = sample_latent(mixture_hp([0.3, 0.7], [0, 1]), [inner_at(0.0), inner_at(1.0)], S, seed=3)
    var = 1 + 0.3 * 0.7
    assert abs(d.W[:, 0].mean() - 0.7) < 3 * math.sqrt(var / S)


def test_node_frequencies_match_masses():
    S = 100_000
    masses = np.array([0.1, 0.25, 0.4, 0.25])
    d = sample_latent(mixture_hp(masses, [0] * 4), [inner_at(0.0)] * 4, S, seed=4)
    counts = np.bincount(d.node, minlength=4)
    assert chisquare(counts, masses * S).pvalue > 0.001


def test_single_node_draws_and_determinism(toy):
    lik, st, _, _ = toy
    model = LatentGaussianModel(lik, st)
    r = inner_optimize(np.array([4.0, 3.0]), model)
    hp = mixture_hp([1.0], [0])
    S = 4000
    d1 = sample_latent(hp, [r], S, seed=9)
    d2 = sample_latent(hp, [r], S, seed=9)
    np.testing.assert_array_equal(d1.W, d2.W)
    sd = np.sqrt(np.diag(np.linalg.inv(model.neg_hessian(r.W, r.theta))))
    assert np.all(np.abs(d1.W.mean(axis=0) - r.W) < 4 * sd / math.sqrt(S))
    dd = sample_latent(hp, [r], S, seed=9, dense_only=True)
    assert dd.W.shape == (S, st.n_dense)


def fd(f, x, h=1e-5):
    out = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def test_composed_log_joint_derivatives(toy):
    lik, st, _, _ = toy
    model = LatentGaussianModel(lik, st)
    rng = np.random.default_rng(3)
    theta = np.array([3.0, 2.0])
    for _ in range(3):
        W = rng.normal(0, 0.2, st.dim)
        g = model.gradient(W, theta)
        gfd = fd(lambda w: model.log_joint(w, theta), W)
        assert np.max(np.abs(g - gfd)) / np.max(np.abs(g)) < 1e-6
        H = model.neg_hessian(W, theta)
        Hfd = -np.array([fd(lambda w: model.gradient(w, theta)[i], W) for i in range(st.dim)])
        assert np.max(np.abs(H - Hfd)) / np.max(np.abs(H)) < 1e-6


# ---------------------------------------------------------------- end to end

RW2 = Rw2EffectSpec("pm", 2.5, 20.0)


def sim(T=700, sigma0=0.0, seed=21):
    series, truth = generate_series(GenConfig(T=T, sigma0=sigma0, seed=seed), TrendSpec("smooth"))
    return series, truth, build_time_stratified(T, 28)


def truth_on(res, truth):
    cs = res.curves[0]
    return truth.curve(cs.grid) - truth.curve(np.array([20.0]))[0]


def test_fit_standard_model_covers_truth():
    series, truth, frames = sim()
    res = fit(series, frames, ModelSpec(rw2=[RW2], overdispersion=False), FitOptions(seed=1))
    assert np.isfinite(res.theta_summary["theta_pm"]["sigma_median"])
    assert "theta0" not in res.theta_summary and res.z_summary is None
    cs = res.curves[0]
    keep = cs.counts >= 20
    tv = truth_on(res, truth)
    inside = (cs.lower <= tv) & (tv <= cs.upper)
    assert inside[keep].mean() >= 0.7


def test_fit_with_and_without_z_agree_without_overdispersion():
    series, _, frames = sim()
    on = fit(series, frames, ModelSpec(rw2=[RW2], overdispersion=True), FitOptions(seed=1))
    off = fit(series, frames, ModelSpec(rw2=[RW2], overdispersion=False), FitOptions(seed=1))
    keep = on.curves[0].counts >= 20
    assert np.max(np.abs(on.curves[0].median - off.curves[0].median)[keep]) < 0.02
    assert "theta0" in on.theta_summary and "sigma_median" in on.theta_summary["theta0"]


def test_fit_k1_is_plain_laplace():
    series, _, frames = sim(T=300)
    model = ModelSpec(rw2=[RW2], overdispersion=False)
    res = fit(series, frames, model, FitOptions(k=1, n_draws=2000, seed=2))
    assert res.hyper.masses.tolist() == [1.0]
    lgm = LatentGaussianModel(ConditionalPoisson(series.Y, frames), build_structure(series, model))
    r = inner_optimize(res.hyper.theta_hat, lgm)
    np.testing.assert_allclose(res.node_modes[0], r.W, atol=1e-8)
    sd = np.sqrt(np.diag(np.linalg.inv(lgm.neg_hessian(r.W, r.theta))))
    assert np.all(np.abs(res.draws.W.mean(axis=0) - r.W) < 4.5 * sd / math.sqrt(2000))


def test_fit_setup_errors_are_stage_labelled():
    series, _, frames = sim(T=100)
    with pytest.raises(InferenceError) as info:
        fit(series, frames, ModelSpec(fixed_effects=["missing"]))
    assert info.value.stage == "setup"
