"""Latent Gaussian field W = (beta, gamma, Z): RW(2) priors, binning, hyperpriors.

Conventions
-----------
* theta holds log-precisions, sigma^2 = exp(-theta).  Its layout is
  ``(theta_0, theta_1, ..., theta_J)`` when the overdispersion effects are
  on and ``(theta_1, ..., theta_J)`` otherwise.
* Each RW(2) effect on K bins contributes K - 2 free levels (two adjacent
  levels pinned at 0) plus one slope, stored with the fixed effects.
* W is ordered (beta, gamma, Z); beta is (fixed columns, basis columns,
  RW(2) slopes).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from . import basis

LOG2PI = math.log(2.0 * math.pi)

TRANSFORMS = {
    None: lambda x: np.asarray(x, dtype=float),
    "identity": lambda x: np.asarray(x, dtype=float),
    "sqrt": np.sqrt,
    "log": np.log,
}
INVERSE_TRANSFORMS = {None: lambda x: np.asarray(x, dtype=float), "identity": lambda x: np.asarray(x, dtype=float),
                      "sqrt": np.square, "log": np.exp}


# ---------------------------------------------------------------- RW(2) pieces

def rw2_precision(K: int) -> sp.csr_matrix:
    """Structure matrix D'D of a second-order random walk on K levels."""
    if K < 3:
        raise ValueError(f"RW(2) needs at least 3 levels, got K={K}")
    D = sp.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(K - 2, K))
    return (D.T @ D).tocsr()


@dataclass(frozen=True)
class Rw2Constraint:
    K: int
    pinned: tuple  # 0-based indices of the two levels fixed at zero
    free: np.ndarray  # 0-based indices of the K - 2 free levels


def constrain_rw2(Q, reference_bin: int):
    """Drop the rows/columns of the 1-based bins (k, k+1); the result is SPD.

    When the reference is the last bin the pair (K-1, K) is pinned instead.
    """
    Q = sp.csr_matrix(Q)
    K = Q.shape[0]
    if not 1 <= reference_bin <= K:
        raise ValueError(f"reference bin {reference_bin} outside 1..{K}")
    k = min(reference_bin, K - 1)
    pinned = (k - 1, k)
    free = np.array([i for i in range(K) if i not in pinned], dtype=np.intp)
    Qc = Q[free][:, free].tocsr()
    return Qc, Rw2Constraint(K, pinned, free)


@dataclass
class Rw2EffectSpec:
    covariate: str
    bin_width: float
    reference: float  # u*, on the transformed scale
    transform: str | None = None
    sd_prior_median: float = 0.01

    def __post_init__(self):
        if not self.bin_width > 0:
            raise ValueError(f"bin_width must be positive for {self.covariate!r}")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform!r}")
        if not self.sd_prior_median > 0:
            raise ValueError("sd_prior_median must be positive")

    def apply_transform(self, values):
        return TRANSFORMS[self.transform](values)


@dataclass(frozen=True)
class Binning:
    index: np.ndarray  # 1-based bin of every value
    edges: np.ndarray  # K + 1 edges
    midpoints: np.ndarray
    reference_bin: int  # 1-based
    counts: np.ndarray

    @property
    def K(self) -> int:
        return len(self.midpoints)


def bin_covariate(values, spec: Rw2EffectSpec) -> Binning:
    """Equal-width bins over the transformed range, aligned so u* is a midpoint.

    Bins are left-closed/right-open except the last, which is also
    right-closed so the maximum lands in it.  The grid extends to cover the
    reference value when it lies outside the data.
    """
    x = spec.apply_transform(np.asarray(values, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite (transformed) values in covariate {spec.covariate!r}")
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        raise ValueError(f"covariate {spec.covariate!r} is constant; cannot bin")
    w, ref = spec.bin_width, float(spec.reference)
    lo, hi = min(lo, ref), max(hi, ref)
    # first edge: largest ref - w/2 - n*w not above lo
    first = ref - 0.5 * w - w * math.ceil((ref - 0.5 * w - lo) / w - 1e-9)
    K = int(math.floor((hi - first) / w + 1e-9)) + 1
    edges = first + w * np.arange(K + 1)
    idx = np.clip(np.floor((x - first) / w + 1e-9).astype(int), 0, K - 1) + 1
    ref_bin = int(round((ref - first) / w - 0.5)) + 1
    mids = first + w * (np.arange(K) + 0.5)
    counts = np.bincount(idx - 1, minlength=K)
    return Binning(idx, edges, mids, ref_bin, counts)


# ---------------------------------------------------------------- priors

@dataclass
class PriorSpec:
    beta_precision: float = 0.01
    theta0_shape: float = 0.5
    theta0_rate: float = 1e-7

    def __post_init__(self):
        if not (self.beta_precision > 0 and self.theta0_shape > 0 and self.theta0_rate > 0):
            raise ValueError("prior hyperparameters must be positive")


def loggamma_logpdf(theta, shape, rate):
    """Log density of theta = log(tau), tau ~ Gamma(shape, rate)."""
    theta = np.asarray(theta, dtype=float)
    return shape * theta - rate * np.exp(theta) + shape * math.log(rate) - gammaln(shape)


def pc_logpdf(theta, median):
    """Log density of theta = -2 log(sigma) when sigma ~ Exponential with the given median."""
    theta = np.asarray(theta, dtype=float)
    lam = math.log(2.0) / median
    return math.log(lam / 2.0) - lam * np.exp(-theta / 2.0) - theta / 2.0


# ---------------------------------------------------------------- model spec

@dataclass
class BasisEffectSpec:
    """Exposure curve entered through fixed-effect spline columns.

    ``kind="exposure_bspline"`` uses the two-sided cubic basis of
    :mod:`casecross.basis` pinned to zero at ``reference``.
    """

    covariate: str
    kind: str = "exposure_bspline"
    reference: float = 20.0

    def __post_init__(self):
        if self.kind != "exposure_bspline":
            raise ValueError(f"unknown basis kind {self.kind!r}")

    def basis(self):
        return basis.TwoSidedBasis(reference=self.reference)


@dataclass
class ModelSpec:
    fixed_effects: list = field(default_factory=list)
    rw2: list = field(default_factory=list)
    basis_effects: list = field(default_factory=list)
    priors: PriorSpec = field(default_factory=PriorSpec)
    overdispersion: bool = True

    def __post_init__(self):
        self.rw2 = [r if isinstance(r, Rw2EffectSpec) else Rw2EffectSpec(**r) for r in self.rw2]
        self.basis_effects = [b if isinstance(b, BasisEffectSpec) else BasisEffectSpec(**b)
                              for b in self.basis_effects]
        if isinstance(self.priors, dict):
            self.priors = PriorSpec(**self.priors)
        self.fixed_effects = list(self.fixed_effects)

    @property
    def n_theta(self) -> int:
        return len(self.rw2) + int(self.overdispersion)

    def theta_names(self) -> list:
        names = ["theta0"] if self.overdispersion else []
        return names + [f"theta_{r.covariate}" for r in self.rw2]

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "fixed_effects": list(self.fixed_effects),
            "rw2": [asdict(r) for r in self.rw2],
            "basis_effects": [asdict(b) for b in self.basis_effects],
            "priors": asdict(self.priors),
            "overdispersion": bool(self.overdispersion),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        version = d.pop("schema_version", 1)
        if version != 1:
            raise ValueError(f"unsupported model schema_version {version}")
        unknown = set(d) - {"fixed_effects", "rw2", "basis_effects", "priors", "overdispersion"}
        if unknown:
            raise ValueError(f"unknown model fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------- assembled structure

@dataclass
class CurveMap:
    """How to turn W into an exposure-response curve on a grid."""

    name: str
    grid: np.ndarray  # grid on the covariate's modelling scale
    counts: np.ndarray  # observations per grid cell
    design: np.ndarray  # (G, dim W) dense: curve = design @ W
    reference: float = 0.0  # modelling scale, where the curve is pinned at 0
    transform: str | None = None

    def exposure(self, values=None):
        """Grid (or ``values``) mapped back to the covariate's original scale."""
        return INVERSE_TRANSFORMS[self.transform](self.grid if values is None else values)


@dataclass
class LatentStructure:
    """Everything inference needs about W for one dataset.

    ``design`` maps the (beta, gamma) block to the linear predictor; Z
    enters through the identity.  ``prior_blocks`` lists
    (slice into W, base precision, theta position or None).
    """

    T: int
    n_beta: int
    n_gamma: int
    has_z: bool
    design: sp.csr_matrix  # T x (n_beta + n_gamma)
    names: list
    prior_blocks: list
    priors: PriorSpec
    sd_medians: list  # one per RW(2) effect
    curves: list = field(default_factory=list)
    logdet_base: list = field(default_factory=list)

    @property
    def n_dense(self) -> int:
        return self.n_beta + self.n_gamma

    @property
    def dim(self) -> int:
        return self.n_dense + (self.T if self.has_z else 0)

    @property
    def n_theta(self) -> int:
        return sum(1 for _, _, ti in self.prior_blocks if ti is not None)

    def eta(self, W) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        out = self.design @ W[: self.n_dense]
        if self.has_z:
            out = out + W[self.n_dense:]
        return out

    def precision_scales(self, theta) -> list:
        theta = np.asarray(theta, dtype=float)
        return [1.0 if ti is None else math.exp(theta[ti]) for _, _, ti in self.prior_blocks]

    def dense_precision(self, theta) -> np.ndarray:
        """Prior precision of the (beta, gamma) block."""
        P = np.zeros((self.n_dense, self.n_dense))
        for (sl, base, _), s in zip(self.prior_blocks, self.precision_scales(theta)):
            if sl.start < self.n_dense:
                P[sl, sl] = s * base.toarray()
        return P

    def z_precision(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return math.exp(theta[0]) if self.has_z else 0.0

    def full_precision(self, theta) -> sp.csr_matrix:
        blocks = [s * base for (_, base, _), s in zip(self.prior_blocks, self.precision_scales(theta))]
        return sp.block_diag(blocks, format="csr")

    def prior_logdensity(self, W, theta) -> float:
        return latent_prior_logdensity(W, theta, self)

    def hyper_logprior(self, theta) -> float:
        return hyper_prior_logdensity(theta, self.priors, self.sd_medians, self.has_z)


def latent_prior_logdensity(W, theta, structure: LatentStructure) -> float:
    """log pi(W | theta) including the theta-dependent normalising constants."""
    W = np.asarray(W, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if W.shape != (structure.dim,):
        raise ValueError(f"W has shape {W.shape}, expected ({structure.dim},)")
    total = 0.0
    for (sl, base, ti), ld in zip(structure.prior_blocks, structure.logdet_base):
        w = W[sl]
        n = len(w)
        scale = 1.0 if ti is None else math.exp(theta[ti])
        log_scale = 0.0 if ti is None else float(theta[ti])
        quad = float(w @ (base @ w))
        total += -0.5 * n * LOG2PI + 0.5 * (n * log_scale + ld) - 0.5 * scale * quad
    return total


def hyper_prior_logdensity(theta, priors: PriorSpec, sd_medians, has_z: bool) -> float:
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("non-finite theta")
    total = 0.0
    offset = 0
    if has_z:
        total += float(loggamma_logpdf(theta[0], priors.theta0_shape, priors.theta0_rate))
        offset = 1
    for j, med in enumerate(sd_medians):
        total += float(pc_logpdf(theta[offset + j], med))
    return total


def _logdet_sparse_spd(A) -> float:
    A = A.toarray() if sp.issparse(A) else np.asarray(A)
    sign, ld = np.linalg.slogdet(A)
    if sign <= 0:
        raise ValueError("prior precision block is not positive definite")
    return float(ld)


def build_structure(series, model: ModelSpec, grid_width: float = 1.0) -> LatentStructure:
    """Assemble the design and prior blocks of ``model`` for a DailySeries.

    ``grid_width`` sets the evaluation grid of basis (spline) effects; RW(2)
    effects are reported on their own bin midpoints.
    """
    T = series.T
    cols, names = [], []
    for name in model.fixed_effects:
        if name not in series.covariates:
            raise KeyError(f"fixed effect column {name!r} missing from data")
        cols.append(sp.csr_matrix(np.asarray(series.covariates[name], dtype=float).reshape(-1, 1)))
        names.append(f"beta[{name}]")

    pending_curves = []
    for be in model.basis_effects:
        if be.covariate not in series.covariates:
            raise KeyError(f"basis covariate {be.covariate!r} missing from data")
        x = np.asarray(series.covariates[be.covariate], dtype=float)
        bas = be.basis()
        B = bas.design(x)
        start = sum(c.shape[1] for c in cols)
        cols.append(sp.csr_matrix(B))
        names.extend(f"beta[{be.covariate}:bs{i + 1}]" for i in range(B.shape[1]))
        lo, hi = float(x.min()), float(x.max())
        edges = np.arange(math.floor(lo / grid_width) * grid_width, hi + grid_width, grid_width)
        counts, _ = np.histogram(x, bins=edges)
        mids = 0.5 * (edges[:-1] + edges[1:])
        pending_curves.append((be.covariate, mids, counts, start, bas.design(mids), be.reference))

    binnings = []
    slope_start = sum(c.shape[1] for c in cols)
    for r in model.rw2:
        if r.covariate not in series.covariates:
            raise KeyError(f"RW(2) covariate {r.covariate!r} missing from data")
        u = r.apply_transform(np.asarray(series.covariates[r.covariate], dtype=float))
        cols.append(sp.csr_matrix((u - r.reference).reshape(-1, 1)))
        names.append(f"slope[{r.covariate}]")
        binnings.append(bin_covariate(series.covariates[r.covariate], r))
    n_beta = sum(c.shape[1] for c in cols)

    gamma_cols, constraints, Qcs = [], [], []
    for r, b in zip(model.rw2, binnings):
        if b.K < 4:
            raise ValueError(f"RW(2) effect {r.covariate!r} has K={b.K} bins; need at least 4")
        Qc, con = constrain_rw2(rw2_precision(b.K), b.reference_bin)
        # column position of each bin among the free levels (-1 when pinned)
        pos = np.full(b.K, -1)
        pos[con.free] = np.arange(b.K - 2)
        rows = np.nonzero(pos[b.index - 1] >= 0)[0]
        inc = sp.csr_matrix((np.ones(len(rows)), (rows, pos[b.index[rows] - 1])), shape=(T, b.K - 2))
        gamma_cols.append(inc)
        constraints.append(con)
        Qcs.append(Qc)
        names.extend(f"gamma[{r.covariate}:{i + 1}]" for i in con.free)
    n_gamma = sum(c.shape[1] for c in gamma_cols)

    all_cols = cols + gamma_cols
    design = sp.hstack(all_cols, format="csr") if all_cols else sp.csr_matrix((T, 0))

    blocks, logdets = [], []
    if n_beta:
        blocks.append((slice(0, n_beta), model.priors.beta_precision * sp.identity(n_beta, format="csr"), None))
        logdets.append(n_beta * math.log(model.priors.beta_precision))
    theta_off = 1 if model.overdispersion else 0
    g0 = n_beta
    for j, Qc in enumerate(Qcs):
        n = Qc.shape[0]
        blocks.append((slice(g0, g0 + n), Qc, theta_off + j))
        logdets.append(_logdet_sparse_spd(Qc))
        g0 += n
    if model.overdispersion:
        nd = n_beta + n_gamma
        blocks.append((slice(nd, nd + T), sp.identity(T, format="csr"), 0))
        logdets.append(0.0)
        names.extend(f"Z[{t + 1}]" for t in range(T))

    dim = n_beta + n_gamma + (T if model.overdispersion else 0)
    curves = []
    for cov, mids, counts, start, Bg, ref in pending_curves:
        D = np.zeros((len(mids), dim))
        D[:, start:start + Bg.shape[1]] = Bg
        curves.append(CurveMap(cov, mids, counts, D, ref))
    g0 = n_beta
    for j, (r, b, con) in enumerate(zip(model.rw2, binnings, constraints)):
        D = np.zeros((b.K, dim))
        D[:, slope_start + j] = b.midpoints - r.reference
        D[con.free, g0 + np.arange(b.K - 2)] = 1.0
        curves.append(CurveMap(r.covariate, b.midpoints, b.counts, D, float(r.reference), r.transform))
        g0 += b.K - 2

    return LatentStructure(
        T=T, n_beta=n_beta, n_gamma=n_gamma, has_z=model.overdispersion, design=design,
        names=names, prior_blocks=blocks, priors=model.priors,
        sd_medians=[r.sd_prior_median for r in model.rw2], curves=curves, logdet_base=logdets,
    )
