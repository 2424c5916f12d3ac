"""Conditional Poisson / logistic / multinomial likelihoods of case-crossover designs.

All three are functions of the linear predictor eta (one value per day).
With shared exposures the conditional logistic likelihood of individual
case days equals the conditional Poisson likelihood of the daily counts,
and the multinomial form differs from both by a constant.

For every frame k let Ybar_k be the number of cases whose frame is k.  Then

    loglik(eta) = sum_t Y_t eta_t - sum_k Ybar_k logsumexp(eta[frame_k])

which covers partitions (time-stratified) and per-day overlapping frames
with the same code.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .frames import ReferenceFrameSet, weekday_of


@dataclass
class DailySeries:
    Y: np.ndarray
    covariates: dict = field(default_factory=dict)
    weekday: np.ndarray | None = None  # 0 = Sunday
    start_date: dt.date | None = None

    def __post_init__(self):
        self.Y = np.asarray(self.Y)
        if self.Y.ndim != 1:
            raise ValueError("Y must be one-dimensional")
        if np.any(self.Y < 0) or not np.all(np.equal(np.mod(self.Y, 1), 0)):
            raise ValueError("Y must hold nonnegative integer counts")
        self.Y = self.Y.astype(np.int64)
        T = len(self.Y)
        for name, v in self.covariates.items():
            if len(v) != T:
                raise ValueError(f"covariate {name!r} has length {len(v)}, expected {T}")
        self.covariates = {k: np.asarray(v, dtype=float) for k, v in self.covariates.items()}
        if self.weekday is None:
            day1 = (self.start_date.isoweekday() % 7) if self.start_date else 0
            self.weekday = weekday_of(np.arange(1, T + 1), day1)
        self.weekday = np.asarray(self.weekday, dtype=int)

    @property
    def T(self) -> int:
        return len(self.Y)


# ---------------------------------------------------------------- core pieces

def _check_eta(eta, T):
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (T,):
        raise ValueError(f"eta has shape {eta.shape}, expected ({T},)")
    if not np.all(np.isfinite(eta)):
        raise ValueError("non-finite linear predictor")
    return eta


def _frame_softmax(eta, idx, mask):
    """Per-frame log-sum-exp and softmax with max subtraction."""
    E = np.where(mask, eta[idx], -np.inf)
    m = E.max(axis=1, keepdims=True)
    P = np.exp(E - m)
    s = P.sum(axis=1, keepdims=True)
    lse = (m + np.log(s)).ravel()
    return lse, P / s


class ConditionalPoisson:
    """Conditional Poisson log-likelihood of daily counts over a frame set.

    Precomputes the padded frame layout and the sparsity pattern of the
    Hessian so repeated evaluations (Newton iterations, quadrature nodes)
    only recompute values.  ``curvature`` returns the negated Hessian
    entries aligned with ``hess_rows``/``hess_cols`` (duplicates summed by
    the consumer).
    """

    def __init__(self, Y, frames: ReferenceFrameSet):
        Y = np.asarray(Y)
        if len(Y) != frames.T:
            raise ValueError(f"Y has length {len(Y)} but frames cover T={frames.T}")
        self.Y = Y.astype(float)
        self.T = frames.T
        self.frames = frames
        of = frames.day_to_frame_array()
        orphan = (of < 0) & (self.Y > 0)
        if orphan.any():
            days = np.nonzero(orphan)[0][:5] + 1
            raise ValueError(f"days with cases but no reference frame: {days.tolist()}")
        self.idx, self.mask = frames.padded()
        framed = of >= 0
        self.y_framed = np.where(framed, self.Y, 0.0)
        self.ybar = np.bincount(of[framed], weights=self.Y[framed], minlength=frames.n_frames)
        m = self.idx.shape[1]
        ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
        valid = self.mask[:, :, None] & self.mask[:, None, :]
        self._pair = valid
        self.hess_rows = np.broadcast_to(self.idx[:, :, None], valid.shape)[valid]
        self.hess_cols = np.broadcast_to(self.idx[:, None, :], valid.shape)[valid]
        self._diag = np.broadcast_to(ii == jj, valid.shape)[valid]

    def value(self, eta) -> float:
        eta = _check_eta(eta, self.T)
        lse, _ = _frame_softmax(eta, self.idx, self.mask)
        return float(self.y_framed @ eta - self.ybar @ lse)

    def grad(self, eta) -> np.ndarray:
        eta = _check_eta(eta, self.T)
        _, P = _frame_softmax(eta, self.idx, self.mask)
        g = self.y_framed.copy()
        np.add.at(g, self.idx[self.mask], -(self.ybar[:, None] * P)[self.mask])
        return g

    def curvature(self, eta) -> np.ndarray:
        """Entries of -d2 loglik / d eta2: Ybar_k (diag(p_k) - p_k p_k')."""
        eta = _check_eta(eta, self.T)
        _, P = _frame_softmax(eta, self.idx, self.mask)
        outer = -P[:, :, None] * P[:, None, :]
        outer += np.einsum("ki,ij->kij", P, np.eye(P.shape[1]))
        return (self.ybar[:, None, None] * outer)[self._pair]

    def grad_hess(self, eta):
        """Gradient and Hessian (of the log-likelihood, so NSD) in eta."""
        g = self.grad(eta)
        H = sp.coo_matrix((-self.curvature(eta), (self.hess_rows, self.hess_cols)),
                          shape=(self.T, self.T)).tocsr()
        return g, H


class GaussianLikelihood:
    """Y_t ~ N(eta_t, 1/precision): a quadratic stand-in for checking inference."""

    def __init__(self, y, precision: float = 1.0):
        self.y = np.asarray(y, dtype=float)
        self.T = len(self.y)
        self.precision = float(precision)
        self.hess_rows = np.arange(self.T)
        self.hess_cols = np.arange(self.T)

    def value(self, eta) -> float:
        r = self.y - np.asarray(eta, dtype=float)
        return float(0.5 * self.T * np.log(self.precision / (2 * np.pi)) - 0.5 * self.precision * r @ r)

    def grad(self, eta) -> np.ndarray:
        return self.precision * (self.y - np.asarray(eta, dtype=float))

    def curvature(self, eta) -> np.ndarray:
        return np.full(self.T, self.precision)


# ---------------------------------------------------------------- functional API

def cond_poisson_loglik(Y, eta, frames: ReferenceFrameSet) -> float:
    return ConditionalPoisson(Y, frames).value(eta)


def cond_poisson_grad_hess(Y, eta, frames: ReferenceFrameSet):
    return ConditionalPoisson(Y, frames).grad_hess(eta)


def cond_logistic_loglik(case_days, eta, frames: ReferenceFrameSet) -> float:
    """Sum over individual cases of eta_case - logsumexp(eta over its frame)."""
    eta = _check_eta(eta, frames.T)
    total = 0.0
    for t in np.asarray(case_days, dtype=int).ravel():
        t = int(t)
        if t not in frames.frame_of:
            raise ValueError(f"case day {t} has no reference frame")
        f = frames.frame_for(t) - 1
        if t - 1 not in f:
            raise ValueError(f"case day {t} is missing from its own frame")
        e = eta[f]
        m = e.max()
        total += eta[t - 1] - (m + np.log(np.exp(e - m).sum()))
    return float(total)


def counts_to_case_days(Y) -> np.ndarray:
    """Expand daily counts into a multiset of 1-based case days."""
    Y = np.asarray(Y, dtype=int)
    return np.repeat(np.arange(1, len(Y) + 1), Y)


def stratum_counts(Y, frames: ReferenceFrameSet) -> list:
    """Per-frame count vectors N_k for a time-stratified design (N_ks = Y_s)."""
    if not frames.is_partition:
        raise ValueError("stratum counts are defined for partition (time-stratified) designs")
    Y = np.asarray(Y)
    return [Y[f - 1].astype(int) for f in frames.frames]


def multinomial_loglik(counts, eta, frames: ReferenceFrameSet) -> float:
    """Multinomial log-likelihood of per-frame counts, with coefficients."""
    eta = _check_eta(eta, frames.T)
    if len(counts) != frames.n_frames:
        raise ValueError(f"{len(counts)} count vectors for {frames.n_frames} frames")
    total = 0.0
    for N, f in zip(counts, frames.frames):
        N = np.asarray(N, dtype=float)
        if N.shape != f.shape:
            raise ValueError("count vector does not match its frame")
        e = eta[f - 1]
        m = e.max()
        log_delta = e - (m + np.log(np.exp(e - m).sum()))
        nbar = N.sum()
        total += N @ log_delta + gammaln(nbar + 1) - gammaln(N + 1).sum()
    return float(total)


def multinomial_constant(counts) -> float:
    """Sum over frames of the log multinomial coefficient."""
    return float(sum(gammaln(np.sum(N) + 1) - gammaln(np.asarray(N) + 1.0).sum() for N in counts))


# ---------------------------------------------------------------- variance diagnostics

def poisson_lognormal_variance(mean_tilde, sigma0):
    """Var(Y) = E [1 + E (exp(sigma0^2) - 1)] with E the marginal mean of Y."""
    E = np.asarray(mean_tilde, dtype=float)
    if np.any(E < 0) or np.any(np.asarray(sigma0) < 0):
        raise ValueError("mean and sigma0 must be nonnegative")
    return E * (1.0 + E * np.expm1(np.asarray(sigma0, dtype=float) ** 2))


def multinomial_od_variance(N_bar, delta_tilde, sigma0):
    """Var(N_ks) = N D (1 - D) [1 + sigma0^2 (N - 1) D (1 - D)]."""
    N = np.asarray(N_bar, dtype=float)
    D = np.asarray(delta_tilde, dtype=float)
    if np.any(N < 1) or np.any((D <= 0) | (D >= 1)) or np.any(np.asarray(sigma0) < 0):
        raise ValueError("need N_bar >= 1, 0 < delta < 1, sigma0 >= 0")
    v = N * D * (1 - D)
    return v * (1.0 + np.asarray(sigma0, dtype=float) ** 2 * (N - 1) * D * (1 - D))
