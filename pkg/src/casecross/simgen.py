"""Synthetic daily-count datasets with a known exposure-response curve.

log E[Y_t | Z_t] = baseline(t) + dow(t) + f(pm_t) + Z_t,  Z_t ~ N(0, sigma0^2).

The exposure-response f is a two-sided cubic B-spline (see
:mod:`casecross.basis`) pinned at 0 at the reference exposure and scaled
by 10.  Its coefficients are a stand-in chosen to be increasing and
concave; they are stored here so every experiment evaluates against the
same truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .basis import TwoSidedBasis
from .likelihood import DailySeries

SIGMA0_LEVELS = {
    "none": 0.0,
    "moderate": math.exp(-7.0 / 2.0),
    "strong": math.exp(-3.5 / 2.0),
}
DOW_EFFECTS = (0.0, 0.2, 0.3, 0.3, 0.25, 0.2, 0.05)  # Sunday .. Saturday

# control points of 0.05 * (x^0.63 - 20^0.63) / 20^0.63 at the Greville abscissae
DEFAULT_COEFFICIENTS = (
    -0.05, -0.034240, -0.017827, -0.005426,
    0.005099, 0.018982, 0.050596, 0.074102, 0.089553,
)


def resolve_sigma0(value) -> float:
    if isinstance(value, str):
        if value not in SIGMA0_LEVELS:
            raise ValueError(f"unknown sigma0 level {value!r}; use one of {sorted(SIGMA0_LEVELS)}")
        return SIGMA0_LEVELS[value]
    value = float(value)
    if value < 0 or not math.isfinite(value):
        raise ValueError(f"sigma0 must be a nonnegative number, got {value}")
    return value


@dataclass
class ExposureCurveSpec:
    reference: float = 20.0
    coefficients: tuple | None = DEFAULT_COEFFICIENTS
    multiplier: float = 10.0

    def basis(self) -> TwoSidedBasis:
        return TwoSidedBasis(reference=self.reference)


def eval_exposure_curve(pm, spec: ExposureCurveSpec | None = None) -> np.ndarray:
    spec = spec or ExposureCurveSpec()
    if spec.coefficients is None:
        raise ValueError("exposure curve coefficients are not set")
    bas = spec.basis()
    c = np.asarray(spec.coefficients, dtype=float)
    if len(c) != bas.dim:
        raise ValueError(f"expected {bas.dim} coefficients, got {len(c)}")
    return spec.multiplier * (bas.design(pm) @ c)


@dataclass
class TrendSpec:
    """Log-baseline: intercept + long-term + seasonal (+ 60-day harmonic when rough)."""

    kind: str = "smooth"
    intercept: float = math.log(60.0)
    seasonal_amplitude: float = 0.15
    long_term: tuple = (0.0, -0.08, 0.05, 0.04)  # cubic in s = 2 t / T - 1
    rough_amplitude: float = 0.1
    rough_period: float = 60.0

    def __post_init__(self):
        if self.kind not in ("none", "smooth", "rough"):
            raise ValueError(f"unknown trend kind {self.kind!r}")

    def __call__(self, t, T=None) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        T = T or len(t)
        out = np.full(t.shape, self.intercept)
        if self.kind == "none":
            return out
        s = 2.0 * (t - 1) / max(T - 1, 1) - 1.0
        out = out + np.polyval(self.long_term[::-1], s)
        out = out + self.seasonal_amplitude * np.sin(2 * np.pi * t / 365.25)
        if self.kind == "rough":
            out = out + self.rough_amplitude * np.sin(2 * np.pi * t / self.rough_period)
        return out


@dataclass
class ExposureSeriesSpec:
    """Positively skewed daily exposure: lognormal AR(1) with seasonal modulation, doubled."""

    log_mean: float = math.log(7.0)
    seasonal_amplitude: float = 0.2
    peak_day: float = 15.0  # day of the seasonal maximum
    ar: float = 0.6
    log_sd: float = 0.55
    doubling: float = 2.0
    upper: float = 102.0
    seed: int = 20240124

    def generate(self, T: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        innov_sd = self.log_sd * math.sqrt(1 - self.ar ** 2)
        e = np.empty(T)
        e[0] = rng.normal(0, self.log_sd)
        noise = rng.normal(0, innov_sd, T)
        for t in range(1, T):
            e[t] = self.ar * e[t - 1] + noise[t]
        t = np.arange(1, T + 1)
        logpm = self.log_mean + self.seasonal_amplitude * np.cos(2 * np.pi * (t - self.peak_day) / 365.25) + e
        return np.minimum(self.doubling * np.exp(logpm), self.upper)


@dataclass
class GenConfig:
    T: int = 2016
    dow_effects: tuple = DOW_EFFECTS
    sigma0: float = 0.0
    exposure: ExposureSeriesSpec = field(default_factory=ExposureSeriesSpec)
    seed: int = 1
    day1_weekday: int = 0  # day 1 is a Sunday

    def __post_init__(self):
        self.sigma0 = resolve_sigma0(self.sigma0)
        if isinstance(self.exposure, dict):
            self.exposure = ExposureSeriesSpec(**self.exposure)
        if self.T < 1:
            raise ValueError("T must be positive")
        if len(self.dow_effects) != 7:
            raise ValueError("dow_effects needs 7 values (Sunday..Saturday)")


@dataclass
class Truth:
    log_mean: np.ndarray
    baseline: np.ndarray
    dow: np.ndarray
    curve_at_days: np.ndarray
    Z: np.ndarray
    sigma0: float
    curve_spec: ExposureCurveSpec

    def recompute_log_mean(self) -> np.ndarray:
        return self.baseline + self.dow + self.curve_at_days + self.Z

    def curve(self, grid) -> np.ndarray:
        return eval_exposure_curve(grid, self.curve_spec)

    def to_dict(self) -> dict:
        return {
            "sigma0": self.sigma0,
            "curve": asdict(self.curve_spec),
            "baseline": self.baseline.tolist(),
            "dow": self.dow.tolist(),
            "curve_at_days": self.curve_at_days.tolist(),
            "Z": self.Z.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Truth":
        spec = ExposureCurveSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["curve"].items()})
        arrs = {k: np.asarray(d[k], dtype=float) for k in ("baseline", "dow", "curve_at_days", "Z")}
        lm = arrs["baseline"] + arrs["dow"] + arrs["curve_at_days"] + arrs["Z"]
        return cls(lm, arrs["baseline"], arrs["dow"], arrs["curve_at_days"], arrs["Z"], d["sigma0"], spec)


def generate_series(config: GenConfig, trend: TrendSpec | None = None,
                    curve: ExposureCurveSpec | None = None, pm=None):
    """Draw one dataset; returns (DailySeries, Truth).

    ``pm`` overrides the synthetic exposure series (e.g. a bundled real one).
    The exposure is shared across replications; only Z and Y depend on
    ``config.seed``.
    """
    trend = trend or TrendSpec()
    curve = curve or ExposureCurveSpec()
    T = config.T
    if pm is None:
        pm = config.exposure.generate(T)
    pm = np.asarray(pm, dtype=float)
    if len(pm) < T:
        raise ValueError(f"exposure series has {len(pm)} days, need {T}")
    pm = pm[:T]
    t = np.arange(1, T + 1)
    weekday = (t - 1 + config.day1_weekday) % 7
    rng = np.random.default_rng(config.seed)
    baseline = trend(t, T)
    dow = np.asarray(config.dow_effects, dtype=float)[weekday]
    f = eval_exposure_curve(pm, curve)
    Z = rng.normal(0.0, config.sigma0, T) if config.sigma0 > 0 else np.zeros(T)
    log_mean = baseline + dow + f + Z
    if np.max(log_mean) > 30:
        raise ValueError(f"log-mean reaches {np.max(log_mean):.1f} > 30; lower the trend intercept "
                         f"({trend.intercept:.3f}) or curve multiplier ({curve.multiplier})")
    Y = rng.poisson(np.exp(log_mean))
    series = DailySeries(Y, {"pm": pm}, weekday)
    return series, Truth(log_mean, baseline, dow, f, Z, config.sigma0, curve)


def replication_seeds(master_seed: int, n: int) -> list:
    """Independent per-replication seeds derived from one master seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master_seed).spawn(n)]


def lagged_average(series, lags: int) -> np.ndarray:
    """Trailing mean over ``lags`` days; the first lags - 1 entries are NaN."""
    if lags < 1:
        raise ValueError("lags must be >= 1")
    x = np.asarray(series, dtype=float)
    out = np.full(len(x), np.nan)
    if len(x) >= lags:
        c = np.cumsum(np.concatenate([[0.0], x]))
        out[lags - 1:] = (c[lags:] - c[:-lags]) / lags
    return out


def config_to_json(config: GenConfig, trend: TrendSpec) -> str:
    return json.dumps({"gen": asdict(config), "trend": asdict(trend)}, indent=2, sort_keys=True)
