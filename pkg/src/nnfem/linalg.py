"""Sparse linear algebra for the Gram solves: Cholesky factorisation with a
fill-reducing ordering, reusable triangular solves, and matvec helpers.

Matrices are scipy CSR/CSC.  The Gram matrices of the order-1 test spaces
are band-structured once reordered, so the factorisation permutes with
reverse Cuthill-McKee and runs a banded Cholesky (LAPACK ``pbtrf``) on the
result; the factor is kept for arbitrarily many solves.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

__all__ = ["NotSPDError", "CholeskyFactor", "cholesky", "solve", "spmv", "spmv_transpose"]


class NotSPDError(ValueError):
    """Raised when a factorisation hits a non-positive pivot."""


class CholeskyFactor:
    """Reusable Cholesky factor of a symmetric positive definite matrix.

    Satisfies ``P B P^T = L L^T`` with ``P`` the fill-reducing permutation.
    ``n_solves`` counts completed solves; the factor itself is immutable.
    """

    def __init__(self, perm, band_factor, n):
        self._perm = perm
        self._iperm = np.argsort(perm)
        self._band = band_factor  # lower banded storage, shape (bw + 1, n)
        self.n = n
        self.n_solves = 0

    @property
    def bandwidth(self):
        return self._band.shape[0] - 1

    @property
    def permutation(self):
        return self._perm

    def lower_triangular(self) -> sp.csr_matrix:
        """The factor L as a sparse matrix (for reconstruction probes)."""
        bw1, n = self._band.shape
        rows, cols, vals = [], [], []
        for r in range(bw1):
            j = np.arange(n - r)
            v = self._band[r, : n - r]
            keep = v != 0.0
            rows.append(j[keep] + r)
            cols.append(j[keep])
            vals.append(v[keep])
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.n:
            raise ValueError(f"rhs has length {rhs.shape[0]}, expected {self.n}")
        y = sla.cho_solve_banded((self._band, True), rhs[self._perm],
                                 overwrite_b=False, check_finite=False)
        self.n_solves += 1
        return y[self._iperm]


def cholesky(B) -> CholeskyFactor:
    """Factor a symmetric positive definite sparse (or dense) matrix."""
    A = sp.csr_matrix(B)
    n, m = A.shape
    if n != m:
        raise ValueError(f"matrix is not square: {A.shape}")
    perm = np.asarray(reverse_cuthill_mckee(A, symmetric_mode=True), dtype=np.int64)
    Ap = A[perm][:, perm].tocoo()
    lower = Ap.row >= Ap.col
    rows, cols, vals = Ap.row[lower], Ap.col[lower], Ap.data[lower]
    bw = int((rows - cols).max()) if len(rows) else 0
    band = np.zeros((bw + 1, n))
    band[rows - cols, cols] = vals
    try:
        factor = sla.cholesky_banded(band, lower=True, check_finite=False)
    except sla.LinAlgError as err:
        raise NotSPDError(f"matrix is not SPD: {err}") from err
    if not np.all(factor[0] > 0.0):
        raise NotSPDError("matrix is not SPD: non-positive pivot")
    return CholeskyFactor(perm, factor, n)


def solve(factor: CholeskyFactor, rhs):
    """Solve ``B x = rhs`` with a previously computed factor."""
    return factor.solve(rhs)


def spmv(A, x):
    """Sparse matrix-vector product ``A @ x`` with a dimension check."""
    x = np.asarray(x)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} @ {x.shape}")
    return A @ x


def spmv_transpose(A, x):
    """Transposed product ``A.T @ x`` with a dimension check."""
    x = np.asarray(x)
    if A.shape[0] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape}.T @ {x.shape}")
    return A.T @ x
