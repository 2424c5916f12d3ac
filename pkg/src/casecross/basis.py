"""Two-sided cubic B-spline basis pinned to zero at a reference exposure.

Each side gets its own clamped cubic basis.  The basis function that equals
one at the shared reference knot is dropped on both sides, so any linear
combination of the remaining columns vanishes at the reference and is
continuous there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

DEGREE = 3
LEFT_KNOTS = (-0.2, -0.2, -0.2, -0.2, 10.0, 20.0)
RIGHT_KNOTS = (20.0, 30.0, 50.0, 102.0, 102.0, 102.0, 102.0)


def clamp_knots(knots, degree=DEGREE) -> np.ndarray:
    """Repeat the end knots until both have multiplicity degree + 1."""
    k = np.asarray(knots, dtype=float)
    lo = degree + 1 - int(np.sum(k == k[0]))
    hi = degree + 1 - int(np.sum(k == k[-1]))
    return np.concatenate([np.full(max(lo, 0), k[0]), k, np.full(max(hi, 0), k[-1])])


def bspline_basis(x, knots, degree=DEGREE) -> np.ndarray:
    """Dense (n, len(knots) - degree - 1) basis matrix; x must lie in the knot span."""
    x = np.asarray(x, dtype=float)
    return BSpline.design_matrix(x, knots, degree, extrapolate=False).toarray()


@dataclass(frozen=True)
class TwoSidedBasis:
    left_knots: tuple = LEFT_KNOTS
    right_knots: tuple = RIGHT_KNOTS
    reference: float = 20.0

    def __post_init__(self):
        if not (self.left_knots[-1] == self.reference == self.right_knots[0]):
            raise ValueError("reference must be the last left knot and the first right knot")

    @property
    def left(self) -> np.ndarray:
        return clamp_knots(self.left_knots)

    @property
    def right(self) -> np.ndarray:
        return clamp_knots(self.right_knots)

    @property
    def n_left(self) -> int:
        return len(self.left) - DEGREE - 2

    @property
    def n_right(self) -> int:
        return len(self.right) - DEGREE - 2

    @property
    def dim(self) -> int:
        return self.n_left + self.n_right

    @property
    def domain(self) -> tuple:
        return float(self.left[0]), float(self.right[-1])

    def side_bases(self, x):
        """Full (unpinned) left and right bases, each evaluated on its own side only."""
        x = np.clip(np.asarray(x, dtype=float), *self.domain)
        left = x < self.reference
        BL = np.zeros((len(x), len(self.left) - DEGREE - 1))
        BR = np.zeros((len(x), len(self.right) - DEGREE - 1))
        if left.any():
            BL[left] = bspline_basis(x[left], self.left)
        if (~left).any():
            BR[~left] = bspline_basis(x[~left], self.right)
        return BL, BR

    def design(self, x) -> np.ndarray:
        """Columns: left functions but the last, then right functions but the first."""
        BL, BR = self.side_bases(x)
        return np.hstack([BL[:, :-1], BR[:, 1:]])


def _greville(knots, degree=DEGREE):
    return np.array([knots[i + 1 : i + degree + 1].mean() for i in range(len(knots) - degree - 1)])


def default_coefficients(basis: TwoSidedBasis | None = None) -> np.ndarray:
    """Stand-in truth: control points on a concave power curve, zero at the reference.

    Before the x10 multiplier the curve runs from about -0.05 at zero
    exposure to about 0.09 at 102, increasing and concave.
    """
    basis = basis or TwoSidedBasis()
    ref = basis.reference

    def g(x):
        x = np.maximum(x, 0.0)
        return 0.05 * (x ** 0.63 - ref ** 0.63) / ref ** 0.63

    cl = g(_greville(basis.left))[:-1]
    cr = g(_greville(basis.right))[1:]
    return np.concatenate([cl, cr])
