"""Curve-level evaluation: pointwise intervals, ERL global envelopes, coverage.

Extreme rank length (ERL) ordering: every draw gets two-sided pointwise
ranks R(g) = min(rank from below, rank from above); its extremeness vector
is R sorted increasingly.  Draws are ordered lexicographically on these
vectors (smaller = more extreme, ties broken by draw index) and the
envelope is the pointwise range of the most central ceil(level * S).
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

ERL = "erl"


@dataclass
class CurveDrawSet:
    draws: np.ndarray  # (S, G)
    grid: np.ndarray
    truth: np.ndarray | None = None

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        self.grid = np.asarray(self.grid, dtype=float)
        if self.draws.shape[1] != len(self.grid):
            raise ValueError("draws and grid disagree on the number of grid points")
        if not np.all(np.isfinite(self.draws)):
            raise ValueError("non-finite curve draws")
        if len(self.grid) > 1 and not np.all(np.diff(self.grid) > 0):
            raise ValueError("grid must be strictly increasing")
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=float)
            if self.truth.shape != self.grid.shape:
                raise ValueError("truth and grid disagree")


@dataclass
class GlobalEnvelope:
    lower: np.ndarray
    upper: np.ndarray
    level: float
    ordering: str = ERL

    def contains(self, curve) -> bool:
        curve = np.asarray(curve)
        return bool(np.all((self.lower <= curve) & (curve <= self.upper)))


def _as_drawset(draws) -> CurveDrawSet:
    if isinstance(draws, CurveDrawSet):
        return draws
    d = np.atleast_2d(np.asarray(draws, dtype=float))
    return CurveDrawSet(d, np.arange(d.shape[1], dtype=float))


def pointwise_interval(draws, level: float = 0.8, min_draws: int = 100):
    """Equal-tailed pointwise interval and median; returns (lower, upper, median)."""
    ds = _as_drawset(draws)
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if ds.draws.shape[0] < min_draws:
        raise ValueError(f"need at least {min_draws} draws, got {ds.draws.shape[0]}")
    q = np.quantile(ds.draws, [(1 - level) / 2, (1 + level) / 2, 0.5], axis=0)
    return q[0], q[1], q[2]


def erl_order(draws) -> np.ndarray:
    """Indices of the draws from most extreme to most central under ERL."""
    X = _as_drawset(draws).draws
    S = X.shape[0]
    lo = rankdata(X, axis=0, method="max")
    hi = rankdata(-X, axis=0, method="max")
    R = np.sort(np.minimum(lo, hi), axis=1)
    keys = [np.arange(S)] + [R[:, j] for j in range(R.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def erl_envelope(draws, level: float = 0.8) -> GlobalEnvelope:
    ds = _as_drawset(draws)
    if not 0 < level <= 1:
        raise ValueError(f"level must lie in (0, 1], got {level}")
    X = ds.draws
    S = X.shape[0]
    if S < 500:
        warnings.warn(f"ERL envelope from only {S} draws; 500+ recommended", stacklevel=2)
    n_central = max(1, math.ceil(level * S - 1e-9))
    central = erl_order(X)[S - n_central:]
    return GlobalEnvelope(X[central].min(axis=0), X[central].max(axis=0), level)


# ---------------------------------------------------------------- replications

@dataclass
class ReplicationCurve:
    grid: np.ndarray
    counts: np.ndarray
    truth: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    env_lower: np.ndarray | None = None
    env_upper: np.ndarray | None = None

    @classmethod
    def from_draws(cls, draws, grid, counts, truth, level=0.8, envelope=True):
        lower, upper, median = pointwise_interval(CurveDrawSet(draws, grid), level)
        env = erl_envelope(draws, level) if envelope else None
        return cls(np.asarray(grid, float), np.asarray(counts), np.asarray(truth, float), median, lower, upper,
                   None if env is None else env.lower, None if env is None else env.upper)


@dataclass
class CoverageReport:
    grid: np.ndarray
    counts: np.ndarray
    pointwise_coverage: np.ndarray
    envelope_pointwise_coverage: np.ndarray | None
    joint_coverage: float | None
    joint_coverage_restricted: float | None
    bias: np.ndarray
    width: np.ndarray
    n_replications: int
    min_count: int

    @property
    def restricted(self) -> np.ndarray:
        return self.counts >= self.min_count

    def summary(self) -> dict:
        r = self.restricted
        out = {
            "n_replications": self.n_replications,
            "n_grid": int(len(self.grid)),
            "n_grid_restricted": int(r.sum()),
            "mean_pointwise_coverage": float(self.pointwise_coverage.mean()),
            "mean_pointwise_coverage_restricted": float(self.pointwise_coverage[r].mean()) if r.any() else None,
            "mean_abs_bias_restricted": float(np.abs(self.bias[r]).mean()) if r.any() else None,
            "mean_width_restricted": float(self.width[r].mean()) if r.any() else None,
            "joint_coverage": self.joint_coverage,
            "joint_coverage_restricted": self.joint_coverage_restricted,
        }
        return out

    def to_rows(self, scenario: str = "") -> list:
        rows = []
        for g, c, pc, b, w, i in zip(self.grid, self.counts, self.pointwise_coverage, self.bias, self.width,
                                     range(len(self.grid))):
            rows.append((g, "count", c, scenario))
            rows.append((g, "pointwise_coverage", pc, scenario))
            rows.append((g, "bias", b, scenario))
            rows.append((g, "width", w, scenario))
            if self.envelope_pointwise_coverage is not None:
                rows.append((g, "envelope_pointwise_coverage", self.envelope_pointwise_coverage[i], scenario))
        return rows


def coverage_report(replications, min_count: int = 20, min_replications: int = 50) -> CoverageReport:
    """Aggregate per-replication intervals/envelopes against the truth."""
    reps = list(replications)
    if not reps:
        raise ValueError("no replications to evaluate")
    if len(reps) < min_replications:
        warnings.warn(f"only {len(reps)} replications; coverage estimates are coarse", stacklevel=2)
    grid = reps[0].grid
    for r in reps[1:]:
        if r.grid.shape != grid.shape or not np.allclose(r.grid, grid, rtol=0, atol=1e-12):
            raise ValueError("replications use different evaluation grids")
    truth = np.array([r.truth for r in reps])
    lower = np.array([r.lower for r in reps])
    upper = np.array([r.upper for r in reps])
    median = np.array([r.median for r in reps])
    counts = reps[0].counts
    inside = (lower <= truth) & (truth <= upper)
    has_env = all(r.env_lower is not None for r in reps)
    env_pw = joint = joint_r = None
    if has_env:
        el = np.array([r.env_lower for r in reps])
        eu = np.array([r.env_upper for r in reps])
        env_in = (el <= truth) & (truth <= eu)
        env_pw = env_in.mean(axis=0)
        joint = float(env_in.all(axis=1).mean())
        keep = counts >= min_count
        joint_r = float(env_in[:, keep].all(axis=1).mean()) if keep.any() else None
    return CoverageReport(grid, counts, inside.mean(axis=0), env_pw, joint, joint_r,
                          (median - truth).mean(axis=0), (upper - lower).mean(axis=0), len(reps), min_count)


def tidy_csv(rows, path=None) -> str:
    """rows of (grid, metric, value, scenario) as CSV with round-trip floats."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["grid", "metric", "value", "scenario"])
    for g, m, v, s in rows:
        w.writerow([repr(float(g)), m, repr(float(v)) if v is not None else "", s])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
