"""Laplace approximation and adaptive Gauss-Hermite quadrature over theta.

For fixed theta the latent field W is Gaussian a priori, so
pi(W | theta, Y) is approximated by N(W_hat, H^-1) at its mode.  The
Laplace marginal log pi_LA(theta, Y) is then integrated over theta with a
product Gauss-Hermite rule recentred at its mode and rescaled by the
Cholesky factor of its inverse curvature.  Posterior draws of W come from
the resulting Gaussian mixture.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import logsumexp

from .latent import LOG2PI, LatentStructure, build_structure, latent_prior_logdensity
from .likelihood import ConditionalPoisson
from .linalg import ArrowCholesky, BandedPattern, NotPositiveDefinite

log = logging.getLogger(__name__)


class InferenceError(RuntimeError):
    def __init__(self, message, stage=None, diagnostics=None):
        super().__init__(f"[{stage}] {message}" if stage else message)
        self.stage = stage
        self.diagnostics = diagnostics or {}


class InnerConvergenceError(InferenceError):
    pass


class HyperposteriorError(InferenceError):
    pass


# ---------------------------------------------------------------- joint model

class LatentGaussianModel:
    """log pi(Y | W) + log pi(W | theta) for one dataset.

    ``likelihood`` needs ``value(eta)``, ``grad(eta)``, ``curvature(eta)``
    and the ``hess_rows``/``hess_cols`` pattern of its negated Hessian.
    """

    def __init__(self, likelihood, structure: LatentStructure):
        if likelihood.T != structure.T:
            raise ValueError(f"likelihood has T={likelihood.T}, structure T={structure.T}")
        self.lik = likelihood
        self.s = structure
        self.J = structure.design.tocsr()
        self.JT = self.J.T.tocsr()
        self.q = structure.n_dense
        self.T = structure.T
        self.pattern = (BandedPattern(self.T, likelihood.hess_rows, likelihood.hess_cols)
                        if structure.has_z else None)

    @property
    def dim(self) -> int:
        return self.s.dim

    def eta(self, W):
        return self.s.eta(W)

    def log_joint(self, W, theta) -> float:
        """log pi(Y | W) + log pi(W | theta); the hyperprior is added separately."""
        return self.lik.value(self.eta(W)) + latent_prior_logdensity(W, theta, self.s)

    def gradient(self, W, theta) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        g = self.lik.grad(self.eta(W))
        wd = W[: self.q]
        out = [self.JT @ g - self.s.dense_precision(theta) @ wd]
        if self.s.has_z:
            out.append(g - self.s.z_precision(theta) * W[self.q:])
        return np.concatenate(out)

    def _curvature_matrix(self, W):
        vals = self.lik.curvature(self.eta(W))
        M = sp.coo_matrix((vals, (self.lik.hess_rows, self.lik.hess_cols)),
                          shape=(self.T, self.T)).tocsr()
        return vals, M

    def factor(self, W, theta) -> ArrowCholesky:
        """Cholesky factor of H = -d2/dW2 log joint at W."""
        vals, M = self._curvature_matrix(W)
        MJ = M @ self.J
        A = (self.JT @ MJ).toarray() + self.s.dense_precision(theta) if self.q else None
        if not self.s.has_z:
            return ArrowCholesky(A=A)
        C = MJ.toarray() if self.q else None
        band = self.pattern.band(vals, self.s.z_precision(theta))
        return ArrowCholesky(A=A, C=C, D_band=band, pattern=self.pattern)

    def neg_hessian(self, W, theta) -> np.ndarray:
        """Dense H (tests and small problems only)."""
        _, M = self._curvature_matrix(W)
        n = self.dim
        Jfull = self.J if not self.s.has_z else sp.hstack([self.J, sp.identity(self.T)], format="csr")
        H = (Jfull.T @ M @ Jfull).toarray()
        return H + self.s.full_precision(theta).toarray()[:n, :n]


# ---------------------------------------------------------------- inner optimisation

@dataclass
class InnerModeResult:
    theta: np.ndarray
    W: np.ndarray
    log_joint: float
    factor: ArrowCholesky
    n_iter: int
    grad_max: float
    trace: list = field(default_factory=list)

    @property
    def logdet(self) -> float:
        return self.factor.logdet


def inner_optimize(theta, model: LatentGaussianModel, W0=None, grad_tol=1e-8, rel_tol=1e-12,
                   max_iter=50, max_halvings=30) -> InnerModeResult:
    """Newton ascent on the log joint with step halving.

    Stops when the gradient max-norm drops below ``grad_tol``.  Near the
    mode the log joint stops changing at machine precision before the
    gradient does, so a step is accepted when it does not decrease the
    objective by more than rounding noise; the relative-change rule only
    ends the iteration once steps stall (halving was needed) or three full
    steps in a row changed the objective by less than ``rel_tol``.
    """
    theta = np.asarray(theta, dtype=float)
    W = np.zeros(model.dim) if W0 is None else np.array(W0, dtype=float)
    f = model.log_joint(W, theta)
    trace = [f]
    n_iter = 0
    small = 0
    converged = False
    for n_iter in range(max_iter + 1):
        g = model.gradient(W, theta)
        gmax = float(np.max(np.abs(g))) if len(g) else 0.0
        if gmax < grad_tol:
            converged = True
            break
        if n_iter == max_iter:
            break
        try:
            F = model.factor(W, theta)
        except NotPositiveDefinite as exc:
            raise InnerConvergenceError(str(exc), "inner", {"theta": theta.tolist(), "iter": n_iter}) from exc
        step = F.solve(g)
        noise = 64 * np.finfo(float).eps * max(1.0, abs(f))
        t = 1.0
        for _ in range(max_halvings + 1):
            W_new = W + t * step
            try:
                f_new = model.log_joint(W_new, theta)
            except ValueError:
                f_new = -np.inf
            if np.isfinite(f_new) and f_new >= f - noise:
                break
            t *= 0.5
        else:
            if gmax < 1e3 * grad_tol:
                converged = True
                break
            raise InnerConvergenceError("no ascent direction after step halving", "inner",
                                        {"theta": theta.tolist(), "iter": n_iter, "grad_max": gmax})
        rel = abs(f_new - f) / max(1.0, abs(f))
        W, f = W_new, f_new
        trace.append(f)
        small = small + 1 if rel < rel_tol else 0
        if small and (t < 1.0 or small >= 3):
            g = model.gradient(W, theta)
            gmax = float(np.max(np.abs(g))) if len(g) else 0.0
            converged = True
            n_iter += 1
            break
    if not converged:
        raise InnerConvergenceError(f"Newton did not converge in {max_iter} iterations", "inner",
                                    {"theta": theta.tolist(), "grad_max": gmax, "trace": trace})
    try:
        F = model.factor(W, theta)
    except NotPositiveDefinite as exc:
        raise InnerConvergenceError(str(exc), "inner", {"theta": theta.tolist()}) from exc
    return InnerModeResult(theta, W, f, F, n_iter, gmax, trace)


def laplace_from_inner(inner: InnerModeResult, structure: LatentStructure) -> float:
    d = len(inner.W)
    return (inner.log_joint + structure.hyper_logprior(inner.theta)
            + 0.5 * d * LOG2PI - 0.5 * inner.logdet)


class LaplaceMarginal:
    """theta -> log pi_LA(theta, Y), with warm starts and a cache of inner results."""

    def __init__(self, model: LatentGaussianModel, **inner_kw):
        self.model = model
        self.inner_kw = inner_kw
        self.cache = {}
        self._last_W = None
        self.n_evals = 0

    def inner(self, theta) -> InnerModeResult:
        key = tuple(np.round(np.asarray(theta, dtype=float), 14))
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        res = inner_optimize(theta, self.model, W0=self._last_W, **self.inner_kw)
        self._last_W = res.W
        self.n_evals += 1
        if len(self.cache) > 256:
            self.cache.clear()
        self.cache[key] = res
        return res

    def __call__(self, theta) -> float:
        return laplace_from_inner(self.inner(theta), self.model.s)


def laplace_log_marginal(theta, model: LatentGaussianModel, **inner_kw) -> float:
    return laplace_from_inner(inner_optimize(theta, model, **inner_kw), model.s)


# ---------------------------------------------------------------- AGHQ

def gauss_hermite(k: int):
    """Nodes/weights for integrals against Lebesgue measure with a N(0,1)-shaped kernel.

    sum_i w_i g(z_i) ~ int g(z) dz, exact when g = N(0,1) density x poly(deg <= 2k-1).
    """
    x, w = np.polynomial.hermite.hermgauss(k)
    z = math.sqrt(2.0) * x
    logw = np.log(w) + x ** 2 + 0.5 * math.log(2.0)
    return z, logw


@dataclass
class HyperPosterior:
    theta_hat: np.ndarray
    H: np.ndarray  # curvature of -log pi_LA at the mode
    L: np.ndarray  # lower Cholesky factor of H^-1
    z: np.ndarray  # (n_nodes, dim) standard nodes
    nodes: np.ndarray  # (n_nodes, dim) theta_hat + L z
    log_weights: np.ndarray
    log_values: np.ndarray  # log pi_LA at nodes
    masses: np.ndarray
    log_norm: float  # log of |L| sum w pi_LA
    k: int

    @property
    def dim(self) -> int:
        return len(self.theta_hat)

    def log_density(self, log_marginal_value):
        """Normalised log posterior of theta given log pi_LA(theta)."""
        return np.asarray(log_marginal_value) - self.log_norm

    def mean(self) -> np.ndarray:
        return self.masses @ self.nodes if self.dim else np.zeros(0)


def finite_difference_hessian(f, x, h=1e-4, f0=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = len(x)
    f0 = f(x) if f0 is None else f0
    H = np.zeros((d, d))
    E = np.eye(d) * h
    for i in range(d):
        H[i, i] = (f(x + E[i]) - 2 * f0 + f(x - E[i])) / h ** 2
        for j in range(i):
            H[i, j] = H[j, i] = (f(x + E[i] + E[j]) - f(x + E[i] - E[j])
                                 - f(x - E[i] + E[j]) + f(x - E[i] - E[j])) / (4 * h ** 2)
    return H


def aghq_grid(log_marginal, dim: int, k: int = 3, theta_init=None, fd_step=1e-4,
              bounds=(-25.0, 40.0), theta_hat=None) -> HyperPosterior:
    """Adapt a product Gauss-Hermite rule of order k to log_marginal.

    ``theta_hat`` skips the mode search (useful when the mode is known).
    """
    if k < 1:
        raise ValueError("quadrature order k must be >= 1")
    if dim == 0:
        v = float(log_marginal(np.zeros(0)))
        e = np.zeros((1, 0))
        return HyperPosterior(np.zeros(0), np.zeros((0, 0)), np.zeros((0, 0)), e, e,
                              np.zeros(1), np.array([v]), np.ones(1), v, k)
    x0 = np.zeros(dim) if theta_init is None else np.asarray(theta_init, dtype=float)

    def neg(t):
        try:
            v = log_marginal(t)
        except InferenceError:
            return 1e100
        return -v if np.isfinite(v) else 1e100

    if theta_hat is None:
        res = minimize(neg, x0, method="L-BFGS-B", jac="3-point", bounds=[bounds] * dim,
                       options={"ftol": 1e-14, "gtol": 1e-7, "maxiter": 500,
                                "finite_diff_rel_step": 1e-5})
        theta_hat = res.x
        log.debug("theta mode %s after %d evaluations (%s)", theta_hat, res.nfev, res.message)
    theta_hat = np.asarray(theta_hat, dtype=float)
    f0 = float(log_marginal(theta_hat))
    H = -finite_difference_hessian(log_marginal, theta_hat, fd_step, f0)
    H = 0.5 * (H + H.T)
    try:
        Lh = np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise HyperposteriorError(
            f"curvature of log pi_LA at theta={theta_hat} is not positive definite "
            f"(eigenvalues {np.linalg.eigvalsh(H)}); use more data or fix theta at its mode with k=1",
            "aghq") from exc
    L = np.linalg.inv(Lh).T  # H^-1 = (Lh Lh')^-1 = Lh^-T Lh^-1, lower factor Lh^-T
    L = np.linalg.cholesky(L @ L.T)
    z1, lw1 = gauss_hermite(k)
    z = np.array(list(itertools.product(z1, repeat=dim)))
    logw = np.array([sum(c) for c in itertools.product(lw1, repeat=dim)])
    nodes = theta_hat + z @ L.T
    logv = np.array([f0 if not np.any(zz) else float(log_marginal(t)) for zz, t in zip(z, nodes)])
    logdetL = float(np.log(np.diag(L)).sum())
    lm = logw + logv
    log_norm = logdetL + float(logsumexp(lm))
    masses = np.exp(lm - logsumexp(lm))
    return HyperPosterior(theta_hat, H, L, z, nodes, logw, logv, masses, log_norm, k)


# ---------------------------------------------------------------- sampling

@dataclass
class PosteriorDraws:
    W: np.ndarray  # (S, p): full W, or the (beta, gamma) block when dense_only
    node: np.ndarray  # (S,)
    dense_only: bool = False


def sample_latent(hp: HyperPosterior, inner: list, S: int, seed=0, dense_only=False) -> PosteriorDraws:
    """Exact draws from the mixture sum_j mass_j N(W_hat_j, H_j^-1).

    Node labels and per-node normals come from independent children of one
    SeedSequence, so results do not depend on evaluation order.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    if len(inner) != len(hp.masses):
        raise ValueError("need one inner result per quadrature node")
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(len(inner) + 1)
    node = np.random.default_rng(children[0]).choice(len(inner), size=S, p=hp.masses)
    f0 = inner[0].factor
    p = f0.q if dense_only else len(inner[0].W)
    out = np.empty((S, p))
    for j, res in enumerate(inner):
        sel = np.nonzero(node == j)[0]
        if len(sel) == 0:
            continue
        rng = np.random.default_rng(children[j + 1])
        nz = res.factor.q if dense_only else len(res.W)
        Z = rng.standard_normal((nz, len(sel)))
        X = res.factor.solve_Rinv(Z, dense_only=dense_only)
        out[sel] = (res.W[:p, None] + X).T
    return PosteriorDraws(out, node, dense_only)


# ---------------------------------------------------------------- end-to-end fit

@dataclass
class FitOptions:
    k: int = 3
    n_draws: int = 1000
    seed: int = 0
    level: float = 0.8
    grid_width: float = 1.0
    theta_init: list | None = None
    fd_step: float = 1e-4
    keep_z_draws: bool = False
    grad_tol: float = 1e-8
    rel_tol: float = 1e-12
    max_iter: int = 50


@dataclass
class CurveSummary:
    name: str
    grid: np.ndarray
    counts: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    draws: np.ndarray  # (S, G)


@dataclass
class FitResult:
    theta_names: list
    hyper: HyperPosterior
    draws: PosteriorDraws
    curves: list
    fixed: dict
    theta_summary: dict
    z_summary: dict | None
    options: FitOptions
    structure: LatentStructure
    node_modes: list
    timings: dict


def default_theta_init(structure: LatentStructure) -> np.ndarray:
    init = [2.0 * math.log(10.0)] if structure.has_z else []  # sigma0 = 0.1
    init += [-2.0 * math.log(m) for m in structure.sd_medians]
    return np.array(init)


def _theta_marginal_quantiles(hp: HyperPosterior, i: int, probs, log_marginal=None):
    """Quantiles of theta_i.

    One-dimensional grids interpolate log pi_LA through the nodes with a
    polynomial in z and integrate it on a fine grid; in more dimensions the
    nodal masses are collapsed onto axis i first.
    """
    if hp.k == 1:
        return np.full(len(probs), hp.theta_hat[i])
    if hp.dim == 1:
        zs, lv = hp.z[:, 0], hp.log_values
    else:
        # collapse masses onto the i-th standard coordinate
        zi = np.round(hp.z[:, i], 12)
        zs = np.unique(zi)
        lv = np.array([logsumexp(np.log(np.maximum(hp.masses[zi == u], 1e-300))) for u in zs])
        lv = lv - gauss_hermite(hp.k)[1]
    coef = np.polyfit(zs, lv, len(zs) - 1)
    grid = np.linspace(zs.min() - 1.5, zs.max() + 1.5, 4001)
    logd = np.polyval(coef, grid)
    if coef[0] > 0 and len(zs) % 2 == 1:
        # even-degree polynomial opening upwards: fall back to a Gaussian in z
        logd = -0.5 * grid ** 2
    dens = np.exp(logd - logd.max())
    cdf = np.cumsum(dens)
    cdf /= cdf[-1]
    zq = np.interp(probs, cdf, grid)
    scale = math.sqrt((hp.L @ hp.L.T)[i, i])
    return hp.theta_hat[i] + scale * zq


def fit(series, frames, model_spec, options: FitOptions | None = None, likelihood=None) -> FitResult:
    """Fit a (possibly overdispersed) case-crossover model end to end."""
    opts = options or FitOptions()
    timings = {}
    t0 = time.perf_counter()
    try:
        structure = build_structure(series, model_spec, grid_width=opts.grid_width)
        lik = likelihood or ConditionalPoisson(series.Y, frames)
        model = LatentGaussianModel(lik, structure)
    except (ValueError, KeyError) as exc:
        raise InferenceError(str(exc), "setup") from exc
    timings["setup"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    lm = LaplaceMarginal(model, grad_tol=opts.grad_tol, rel_tol=opts.rel_tol, max_iter=opts.max_iter)
    init = default_theta_init(structure) if opts.theta_init is None else np.asarray(opts.theta_init, float)
    hp = aghq_grid(lm, structure.n_theta, opts.k, theta_init=init, fd_step=opts.fd_step)
    timings["aghq"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    inner = [lm.inner(t) for t in hp.nodes]
    draws = sample_latent(hp, inner, opts.n_draws, opts.seed, dense_only=not opts.keep_z_draws)
    timings["sampling"] = time.perf_counter() - t0

    lo_q, hi_q = (1 - opts.level) / 2, (1 + opts.level) / 2
    nd = structure.n_dense
    curves = []
    for cm in structure.curves:
        cd = draws.W[:, :nd] @ cm.design[:, :nd].T
        q = np.quantile(cd, [lo_q, 0.5, hi_q], axis=0)
        curves.append(CurveSummary(cm.name, cm.grid, cm.counts, q[1], q[0], q[2], cd))

    fixed = {}
    for i in range(structure.n_beta):
        x = draws.W[:, i]
        fixed[structure.names[i]] = {
            "mean": float(x.mean()), "sd": float(x.std(ddof=1)) if len(x) > 1 else 0.0,
            "median": float(np.median(x)), "lower": float(np.quantile(x, lo_q)),
            "upper": float(np.quantile(x, hi_q)),
        }

    names = model_spec.theta_names()
    theta_summary = {}
    for i, nm in enumerate(names):
        qs = _theta_marginal_quantiles(hp, i, [lo_q, 0.5, hi_q])
        sig = np.exp(-qs / 2.0)
        theta_summary[nm] = {
            "mode": float(hp.theta_hat[i]), "mean": float(hp.mean()[i]),
            "median": float(qs[1]), "lower": float(qs[0]), "upper": float(qs[2]),
            "sigma_median": float(sig[1]), "sigma_lower": float(sig[2]), "sigma_upper": float(sig[0]),
        }

    z_summary = None
    if structure.has_z and draws.W.shape[1] > nd:
        Zd = draws.W[:, nd:]
        q = np.quantile(Zd, [lo_q, 0.5, hi_q], axis=0)
        z_summary = {"median": q[1], "lower": q[0], "upper": q[2]}

    return FitResult(names, hp, draws, curves, fixed, theta_summary, z_summary, opts, structure,
                     [r.W for r in inner], timings)
