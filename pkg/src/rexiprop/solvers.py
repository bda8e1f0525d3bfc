"""Direct factorizations for factor-once / solve-many use.

Two backends behind one interface:

* :class:`BandedFactorization` -- LAPACK band-storage LU (``zgbtrf`` /
  ``zgbtrs``).  The 1D P2 systems are pentadiagonal, so this is the fast
  path; the solve routine releases the GIL, which is what lets a thread
  pool drive the per-shift solves concurrently.
* :class:`DenseFactorization` -- plain dense LU for matrices without
  useful band structure (small oracle systems, random test matrices).

Both expose ``solve(b)`` for vector or multi-column right-hand sides and
keep a reference to the original matrix for residual checks.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack, lu_factor, lu_solve
from scipy.sparse import issparse

from .errors import SolverError

# Matrices at least this densely banded are factored in band storage.
BAND_LIMIT = 32
# Reciprocal condition estimates below this are treated as singular.
RCOND_FLOOR = 1e-14


def _band_extents(mat) -> tuple[int, int]:
    """(kl, ku): lowest sub- and highest super-diagonal holding nonzeros."""
    coo = mat.tocoo()
    if coo.nnz == 0:
        return 0, 0
    d = coo.col - coo.row
    return int(max(0, -d.min())), int(max(0, d.max()))


class BandedFactorization:
    """LU factorization of a banded matrix in LAPACK band storage."""

    def __init__(self, mat, kl: int, ku: int):
        self.matrix = mat
        self.kl = kl
        self.ku = ku
        n = mat.shape[0]
        ab = np.zeros((2 * kl + ku + 1, n), dtype=complex, order="F")
        for d in range(-kl, ku + 1):
            diag = mat.diagonal(d)
            ab[kl + ku - d, max(d, 0): n + min(d, 0)] = diag

        lu, piv, info = lapack.zgbtrf(ab, kl, ku)
        if info > 0:
            raise SolverError(
                f"matrix is singular: zero pivot at index {info - 1}"
            )
        if info < 0:
            raise SolverError(f"banded factorization failed (argument {-info})")
        self._lu = lu
        self._piv = piv

        # Singularity screen on the U diagonal (row kl+ku of the band LU).
        udiag = np.abs(lu[kl + ku, :])
        if n and (not np.all(udiag > 0)
                  or udiag.min() < RCOND_FLOOR * udiag.max()):
            ratio = 0.0 if udiag.max() == 0 else udiag.min() / udiag.max()
            raise SolverError(
                f"matrix is numerically singular (pivot ratio = {ratio:.3e})"
            )

    @property
    def bandwidth(self) -> int:
        """Total bandwidth kl + ku + 1 (pentadiagonal = 5)."""
        return self.kl + self.ku + 1

    def solve(self, b: np.ndarray) -> np.ndarray:
        x, info = lapack.zgbtrs(self._lu, self.kl, self.ku, b, self._piv)
        if info != 0:
            raise SolverError(f"banded back-substitution failed (info={info})")
        return x


class DenseFactorization:
    """Dense LU with partial pivoting."""

    bandwidth = None

    def __init__(self, mat):
        self.matrix = mat
        dense = mat.toarray() if issparse(mat) else np.asarray(mat)
        dense = dense.astype(complex, copy=True)
        self._lu, self._piv = lu_factor(dense, check_finite=False)
        diag = np.abs(np.diagonal(self._lu))
        if not np.all(diag > 0):
            raise SolverError("matrix is singular: zero pivot in dense LU")
        # Cheap singularity screen: ratio of extreme U-diagonal magnitudes.
        if diag.min() < RCOND_FLOOR * diag.max():
            raise SolverError(
                "matrix is numerically singular "
                f"(pivot ratio = {diag.min() / diag.max():.3e})"
            )

    def solve(self, b: np.ndarray) -> np.ndarray:
        return lu_solve((self._lu, self._piv), np.asarray(b, dtype=complex),
                        check_finite=False)


def factorize(mat, band_limit: int = BAND_LIMIT):
    """Factorize a sparse/dense matrix, picking band storage when it pays."""
    if issparse(mat):
        kl, ku = _band_extents(mat)
        if kl + ku + 1 <= band_limit:
            return BandedFactorization(mat, kl, ku)
        return DenseFactorization(mat)
    return DenseFactorization(mat)
