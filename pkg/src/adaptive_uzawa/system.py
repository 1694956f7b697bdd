"""The block system ``[[A, B], [B^T, -D]] [x; y] = [f; g]``."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import DimensionError, NotPositiveError
from .linalg import DEFAULT_DENSE_CAP, CsrMatrix, as_vector, spmv, spmv_transpose, symmetric_part

__all__ = ["SaddleSystem"]


@dataclass(frozen=True, eq=False)
class SaddleSystem:
    """Generalized saddle-point system.

    The second block row reads ``B^T x - D y = g``.  On construction the
    shapes are checked, ``D`` must be symmetric, and when ``n`` is within the
    dense cap ``D`` is checked PSD and ``A_s = (A + A^T)/2`` SPD.
    """

    A: CsrMatrix
    B: CsrMatrix
    D: CsrMatrix
    f: np.ndarray
    g: np.ndarray
    meta: dict = field(default_factory=dict)
    check: bool = True
    dense_cap: int = DEFAULT_DENSE_CAP

    def __post_init__(self):
        n, m = self.B.shape
        if self.A.shape != (n, n):
            raise DimensionError(f"A has shape {self.A.shape}, expected {(n, n)} to match B {self.B.shape}")
        if m > n:
            raise DimensionError(f"B has more columns ({m}) than rows ({n})")
        if self.D.shape != (m, m):
            raise DimensionError(f"D has shape {self.D.shape}, expected {(m, m)}")
        f = as_vector(self.f, n, name="f")
        g = as_vector(self.g, m, name="g")
        f.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", g)
        if not self.D.is_symmetric(rtol=1e-12):
            raise ValueError("D must be symmetric")
        if self.check and n <= self.dense_cap:
            self._check_definiteness()

    def _check_definiteness(self):
        if self.D.nnz:
            Dd = self.D.to_dense()
            lam = scipy.linalg.eigvalsh(Dd)
            if lam[0] < -1e-10 * max(np.abs(lam).max(), 1e-300):
                raise NotPositiveError(f"D is not positive semidefinite (min eigenvalue {lam[0]:.3e})")
        try:
            scipy.linalg.cholesky(self.As.to_dense())
        except scipy.linalg.LinAlgError as exc:
            raise NotPositiveError("symmetric part of A is not positive definite") from exc

    @property
    def n(self):
        return self.A.n_rows

    @property
    def m(self):
        return self.B.n_cols

    @cached_property
    def As(self):
        return symmetric_part(self.A)

    def residuals(self, x, y):
        """Return ``(f - A x - B y, B^T x - D y - g)``."""
        rx = self.f - spmv(self.A, x) - spmv(self.B, y)
        ry = spmv_transpose(self.B, x) - spmv(self.D, y) - self.g
        return rx, ry

    def rhs_norm(self):
        return float(np.sqrt(np.dot(self.f, self.f) + np.dot(self.g, self.g)))

    def block_matrix(self):
        """Assembled ``[[A, B], [B^T, -D]]`` as a CsrMatrix."""
        import scipy.sparse as sp

        K = sp.bmat([[self.A.scipy, self.B.scipy], [self.B.scipy.T, -self.D.scipy]], format="csr")
        return CsrMatrix.from_scipy(K)

    def dense_solution(self):
        """Direct solve of the full system (reference values)."""
        from .linalg import sparse_lu

        K = self.block_matrix()
        z = sparse_lu(K).solve(np.concatenate([self.f, self.g]))
        return z[: self.n], z[self.n:]
