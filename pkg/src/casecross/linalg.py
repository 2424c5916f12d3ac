"""Cholesky factorisation of SPD matrices with a sparse block plus a dense border.

The negative Hessian of the log joint has the arrow shape

    H = [[A,  C'],      A: q x q dense (fixed effects, RW(2) levels)
         [C,  D ]]      D: n x n sparse (daily effects Z), C: n x q

D becomes banded after a symmetric reverse Cuthill-McKee permutation,
which is computed once from its sparsity pattern and reused.  With
D[p, p] = U'U (banded LAPACK) and the Schur complement
S = A - V'V = L_S L_S', V = U^-T C[p], we get H = R'R with

    R = [[U, V], [0, L_S']]     (rows/cols ordered (Z[p], dense)).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_solve, cholesky, cholesky_banded, solve_triangular
from scipy.linalg.lapack import dtbtrs
from scipy.sparse.csgraph import reverse_cuthill_mckee


class NotPositiveDefinite(LinAlgError):
    pass


class BandedPattern:
    """Ordering and banded-storage map for a fixed sparsity pattern of D.

    ``rows``/``cols`` list the (possibly duplicated) structural nonzeros;
    values later supplied in the same order are scattered straight into
    LAPACK upper band storage.
    """

    def __init__(self, n, rows, cols):
        self.n = n
        rows = np.concatenate([np.asarray(rows, dtype=np.intp), np.arange(n)])
        cols = np.concatenate([np.asarray(cols, dtype=np.intp), np.arange(n)])
        pat = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
        pat = ((pat + pat.T) != 0).astype(np.int8).tocsr()
        self.perm = reverse_cuthill_mckee(pat, symmetric_mode=True).astype(np.intp)
        self.inv = np.empty(n, dtype=np.intp)
        self.inv[self.perm] = np.arange(n)
        pr, pc = self.inv[rows], self.inv[cols]
        self.u = int(np.max(np.abs(pr - pc))) if len(pr) else 0
        self._n_entries = len(rows) - n
        # entries in the upper triangle only (each symmetric pair appears twice in a full pattern)
        upper = pr <= pc
        self._upper = upper[: self._n_entries]
        self._flat = ((self.u + pr - pc) * n + pc)[: self._n_entries][self._upper]
        self._diag_flat = self.u * n + np.arange(n)

    def band(self, values, diag_add=0.0) -> np.ndarray:
        """Upper band storage of D[p][:, p], D given by ``values`` on the pattern plus a diagonal."""
        values = np.asarray(values, dtype=float)
        ab = np.bincount(self._flat, weights=values[self._upper], minlength=(self.u + 1) * self.n)
        if np.ndim(diag_add):
            ab[self._diag_flat] += np.asarray(diag_add, dtype=float)[self.perm]
        else:
            ab[self._diag_flat] += diag_add
        return ab.reshape(self.u + 1, self.n)


class ArrowCholesky:
    """H = R'R for the arrow-shaped H; W coordinates ordered (dense, sparse)."""

    def __init__(self, A=None, C=None, D_band=None, pattern: BandedPattern | None = None):
        self.q = 0 if A is None else A.shape[0]
        self.n = 0 if pattern is None else pattern.n
        self.pattern = pattern
        logdet = 0.0
        if self.n:
            try:
                self.U = cholesky_banded(D_band, lower=False, check_finite=False)
            except LinAlgError as exc:
                raise NotPositiveDefinite("sparse block is not positive definite") from exc
            logdet += 2.0 * np.log(self.U[-1]).sum()
        if self.q:
            S = np.array(A, dtype=float)
            if self.n:
                Cp = np.asarray(C, dtype=float)[pattern.perm]
                self.V = self._solve_Ut(Cp)
                S = S - self.V.T @ self.V
            try:
                self.LS = cholesky(S, lower=True, check_finite=False)
            except LinAlgError as exc:
                raise NotPositiveDefinite("Schur complement is not positive definite") from exc
            logdet += 2.0 * np.log(np.diag(self.LS)).sum()
        self.logdet = float(logdet)

    # U is upper banded: U x = b ('N') and U' x = b ('T')
    def _solve_U(self, b):
        x, info = dtbtrs(self.U, b, uplo="U", trans="N")
        if info:
            raise NotPositiveDefinite(f"banded triangular solve failed (info={info})")
        return x

    def _solve_Ut(self, b):
        x, info = dtbtrs(self.U, b, uplo="U", trans="T")
        if info:
            raise NotPositiveDefinite(f"banded triangular solve failed (info={info})")
        return x

    def _split(self, b):
        return b[: self.q], b[self.q:]

    def solve(self, b) -> np.ndarray:
        """H^-1 b for b ordered (dense, sparse)."""
        b = np.asarray(b, dtype=float)
        bd, bs = self._split(b)
        if not self.n:
            return cho_solve((self.LS, True), bd, check_finite=False)
        bs_p = bs[self.pattern.perm]
        y1 = self._solve_Ut(bs_p)
        if self.q:
            y2 = solve_triangular(self.LS, bd - self.V.T @ y1, lower=True, check_finite=False)
            x2 = solve_triangular(self.LS, y2, lower=True, trans="T", check_finite=False)
            x1 = self._solve_U(y1 - self.V @ x2)
        else:
            x2 = np.zeros((0,) + b.shape[1:])
            x1 = self._solve_U(y1)
        return np.concatenate([x2, x1[self.pattern.inv]])

    def solve_Rinv(self, z, dense_only: bool = False) -> np.ndarray:
        """R^-1 z: maps standard normals to N(0, H^-1) draws.

        ``z`` has shape (dim, S) ordered (dense, sparse).  With
        ``dense_only`` only the dense block is returned, which needs only
        the dense part of z.
        """
        z = np.asarray(z, dtype=float)
        zd = z[: self.q]
        x2 = (solve_triangular(self.LS, zd, lower=True, trans="T", check_finite=False)
              if self.q else np.zeros((0,) + z.shape[1:]))
        if dense_only or not self.n:
            return x2
        zs = z[self.q:]
        rhs = zs - self.V @ x2 if self.q else zs
        x1 = self._solve_U(rhs)
        return np.concatenate([x2, x1[self.pattern.inv]])
