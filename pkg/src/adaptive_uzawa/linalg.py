"""
Sparse and dense linear-algebra primitives.

``CsrMatrix`` is the single sparse storage format.  Matrix-vector products are
delegated to scipy's serial CSR kernels, which accumulate every row in index
order, so results are bit-reproducible from run to run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import warnings

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DenseCapError, DimensionError, NotPositiveError, SingularMatrixError

__all__ = [
    "DEFAULT_DENSE_CAP",
    "CsrMatrix",
    "Factorization",
    "as_vector",
    "check_dense_cap",
    "dense_eig_sym",
    "dense_generalized_eig_sym",
    "dot",
    "m_inner",
    "m_norm",
    "sparse_cholesky",
    "sparse_lu",
    "spmv",
    "spmv_transpose",
    "symmetric_part",
]

DEFAULT_DENSE_CAP = 2000


def check_dense_cap(n, cap=None, what="matrix"):
    cap = DEFAULT_DENSE_CAP if cap is None else cap
    if n > cap:
        raise DenseCapError(f"{what} of dimension {n} exceeds the dense cap {cap}")


def as_vector(x, length=None, name="vector"):
    """Return ``x`` as a contiguous 1-D float64 array, checking its length."""
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {v.shape}")
    if length is not None and v.shape[0] != length:
        raise DimensionError(f"{name} has length {v.shape[0]}, expected {length}")
    return v


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Compressed sparse row matrix with sorted, duplicate-free rows.

    Instances are immutable; the index and value arrays are made read-only
    on construction.
    """

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    _validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        row_ptr = np.ascontiguousarray(self.row_ptr, dtype=np.int64)
        col_idx = np.ascontiguousarray(self.col_idx, dtype=np.int64)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        for arr in (row_ptr, col_idx, values):
            arr.setflags(write=False)
        object.__setattr__(self, "n_rows", int(self.n_rows))
        object.__setattr__(self, "n_cols", int(self.n_cols))
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)
        object.__setattr__(self, "values", values)
        if self._validate:
            self._check()

    def _check(self):
        n, nnz = self.n_rows, self.col_idx.shape[0]
        if self.n_rows < 0 or self.n_cols < 0:
            raise ValueError("negative matrix dimension")
        if self.row_ptr.shape != (n + 1,):
            raise ValueError(f"row_ptr has length {self.row_ptr.shape[0]}, expected {n + 1}")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != nnz or self.values.shape[0] != nnz:
            raise ValueError("row_ptr must start at 0 and end at len(col_idx) == len(values)")
        if np.any(np.diff(self.row_ptr) < 0):
            raise ValueError("row_ptr must be nondecreasing")
        if nnz:
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.n_cols:
                raise ValueError("column index out of range")
            steps = np.diff(self.col_idx)
            row_starts = np.zeros(nnz, dtype=bool)
            row_starts[self.row_ptr[:-1][np.diff(self.row_ptr) > 0]] = True
            if np.any(steps[~row_starts[1:]] <= 0):
                raise ValueError("column indices must be strictly increasing within each row")

    # -- constructors -----------------------------------------------------

    @classmethod
    def from_scipy(cls, mat):
        """Build from any scipy sparse matrix; duplicates are summed."""
        csr = sp.csr_matrix(mat, dtype=np.float64, copy=True)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.shape[1], csr.indptr, csr.indices, csr.data)

    @classmethod
    def from_dense(cls, a, keep_zeros=False):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2:
            raise DimensionError(f"expected a 2-D array, got shape {a.shape}")
        if keep_zeros:
            rows, cols = np.indices(a.shape)
            return cls.from_coo(a.shape, rows.ravel(), cols.ravel(), a.ravel())
        return cls.from_scipy(sp.csr_matrix(a))

    @classmethod
    def from_coo(cls, shape, rows, cols, vals):
        """Build from triplets.  Repeated (row, col) pairs are summed."""
        coo = sp.coo_matrix(
            (np.asarray(vals, dtype=np.float64), (np.asarray(rows), np.asarray(cols))),
            shape=shape,
        )
        return cls.from_scipy(coo.tocsr())

    @classmethod
    def identity(cls, n, scale=1.0):
        idx = np.arange(n)
        return cls(n, n, np.arange(n + 1), idx, np.full(n, float(scale)))

    @classmethod
    def zeros(cls, n_rows, n_cols):
        return cls(n_rows, n_cols, np.zeros(n_rows + 1, dtype=np.int64), [], [])

    @classmethod
    def diag(cls, d):
        d = as_vector(d)
        n = d.shape[0]
        return cls(n, n, np.arange(n + 1), np.arange(n), d)

    # -- views --------------------------------------------------------------

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return self.col_idx.shape[0]

    @cached_property
    def scipy(self):
        """Read-only scipy view sharing this matrix's arrays."""
        return sp.csr_matrix(
            (self.values, self.col_idx, self.row_ptr), shape=self.shape, copy=False
        )

    def to_dense(self):
        return self.scipy.toarray()

    def diagonal(self):
        return self.scipy.diagonal()

    def row(self, i):
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]

    def row_norms(self):
        sq = self.values**2
        out = np.zeros(self.n_rows)
        counts = np.diff(self.row_ptr)
        nonempty = counts > 0
        if np.any(nonempty):
            out[nonempty] = np.add.reduceat(sq, self.row_ptr[:-1][nonempty])
        return np.sqrt(out)

    def norm1(self):
        """Maximum absolute column sum."""
        if self.nnz == 0:
            return 0.0
        return float(np.max(np.bincount(self.col_idx, np.abs(self.values), self.n_cols)))

    def frobenius(self):
        return float(np.sqrt(np.sum(self.values**2)))

    def is_symmetric(self, rtol=0.0):
        if self.n_rows != self.n_cols:
            return False
        diff = abs(self.scipy - self.scipy.T)
        worst = diff.max() if diff.nnz else 0.0
        return worst <= rtol * max(np.abs(self.values).max(initial=0.0), 1e-300)

    # -- algebra ------------------------------------------------------------

    def scaled(self, c):
        return CsrMatrix(self.n_rows, self.n_cols, self.row_ptr, self.col_idx,
                         float(c) * self.values, _validate=False)

    def __add__(self, other):
        if not isinstance(other, CsrMatrix):
            return NotImplemented
        if other.shape != self.shape:
            raise DimensionError(f"cannot add {self.shape} and {other.shape}")
        return CsrMatrix.from_scipy(self.scipy + other.scipy)

    def __sub__(self, other):
        if not isinstance(other, CsrMatrix):
            return NotImplemented
        return self + other.scaled(-1.0)

    def submatrix(self, rows=None, cols=None):
        m = self.scipy
        if rows is not None:
            m = m[np.asarray(rows), :]
        if cols is not None:
            m = m[:, np.asarray(cols)]
        return CsrMatrix.from_scipy(m)

    def equals(self, other):
        """Exact structural and value equality."""
        return (
            self.shape == other.shape
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.values, other.values)
        )

    def __matmul__(self, x):
        return spmv(self, x)


def spmv(A, x):
    """Return ``A @ x``."""
    x = as_vector(x, name="x")
    if A.n_cols != x.shape[0]:
        raise DimensionError(
            f"spmv: matrix has {A.n_cols} columns but vector has length {x.shape[0]}"
        )
    return A.scipy @ x


def spmv_transpose(A, x):
    """Return ``A.T @ x`` without forming the transpose.

    The transposed view of a CSR matrix is a CSC matrix over the same arrays.
    """
    x = as_vector(x, name="x")
    if A.n_rows != x.shape[0]:
        raise DimensionError(
            f"spmv_transpose: matrix has {A.n_rows} rows but vector has length {x.shape[0]}"
        )
    return A.scipy.T @ x


def symmetric_part(A):
    """Return ``(A + A.T) / 2`` on the merged sparsity pattern."""
    if A.n_rows != A.n_cols:
        raise DimensionError(f"symmetric_part needs a square matrix, got {A.shape}")
    S = A.scipy
    T = S.T.tocsr()
    # (a_ij + a_ji) / 2 is evaluated with the same operands for (i,j) and (j,i),
    # so the result is exactly symmetric.
    return CsrMatrix.from_scipy((S + T) * 0.5)


def dot(x, y):
    x = as_vector(x, name="x")
    y = as_vector(y, name="y")
    if x.shape != y.shape:
        raise DimensionError(f"dot: lengths {x.shape[0]} and {y.shape[0]} differ")
    return float(np.dot(x, y))


def m_inner(M, x, y):
    """``<M x, y>`` for an operator flagged symmetric."""
    if not getattr(M, "symmetric", False):
        raise ValueError("m_inner requires an operator flagged symmetric")
    return dot(M(x), y)


def m_norm(M, x):
    """``sqrt(<M x, x>)``; tiny negative radicands from rounding are clamped."""
    Mx = M(x)
    r = dot(Mx, x)
    if r < 0.0:
        scale = np.linalg.norm(Mx) * np.linalg.norm(x)
        if r < -1e-12 * scale:
            raise NotPositiveError("operator not positive on this vector")
        r = 0.0
    return float(np.sqrt(r))


def _check_symmetric_dense(M, rtol=1e-10, name="M"):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    scale = np.linalg.norm(M, ord=np.inf)
    if np.linalg.norm(M - M.T, ord=np.inf) > rtol * max(scale, 1e-300):
        raise ValueError(f"{name} is not symmetric to within {rtol:g} relative")
    return 0.5 * (M + M.T)


def dense_eig_sym(M, cap=None):
    """Eigenvalues (ascending) and eigenvectors of a dense symmetric matrix."""
    M = _check_symmetric_dense(M)
    check_dense_cap(M.shape[0], cap)
    return scipy.linalg.eigh(M)


def dense_generalized_eig_sym(M, N, cap=None):
    """Eigenvalues (ascending) of the pencil ``M v = lam N v`` with ``N`` SPD."""
    M = _check_symmetric_dense(M, name="M")
    N = _check_symmetric_dense(N, name="N")
    if M.shape != N.shape:
        raise DimensionError(f"pencil shapes differ: {M.shape} vs {N.shape}")
    check_dense_cap(M.shape[0], cap)
    try:
        L = scipy.linalg.cholesky(N, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NotPositiveError("N is not positive definite (Cholesky failed)") from exc
    # lam(M, N) = lam(L^-1 M L^-T)
    X = scipy.linalg.solve_triangular(L, M, lower=True)
    C = scipy.linalg.solve_triangular(L, X.T, lower=True)
    return scipy.linalg.eigvalsh(0.5 * (C + C.T))


class Factorization:
    """A stored factorization that can solve with the matrix and its transpose."""

    def __init__(self, n, solve, solve_transpose, kind, matrix=None):
        self.n = n
        self._solve = solve
        self._solve_t = solve_transpose
        self.kind = kind
        self.matrix = matrix

    def solve(self, b):
        b = as_vector(b, self.n, name="b")
        return self._solve(b)

    def solve_transpose(self, b):
        b = as_vector(b, self.n, name="b")
        return self._solve_t(b)


def _singular_pivot(A):
    """Best-effort location of the failing pivot for error reporting."""
    counts = np.diff(A.row_ptr)
    empty_rows = np.flatnonzero(counts == 0)
    if empty_rows.size:
        return int(empty_rows[0])
    col_counts = np.bincount(A.col_idx, minlength=A.n_cols)
    empty_cols = np.flatnonzero(col_counts == 0)
    if empty_cols.size:
        return int(empty_cols[0])
    if A.n_rows <= DEFAULT_DENSE_CAP:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, _ = scipy.linalg.lu_factor(A.to_dense(), check_finite=False)
        zero = np.flatnonzero(np.abs(np.diag(lu)) <= np.finfo(float).eps * np.abs(lu).max())
        if zero.size:
            return int(zero[0])
    return None


def sparse_lu(A):
    """LU factorization with partial (threshold) pivoting via SuperLU."""
    if A.n_rows != A.n_cols:
        raise DimensionError(f"sparse_lu needs a square matrix, got {A.shape}")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lu = spla.splu(A.scipy.tocsc(), permc_spec="COLAMD", diag_pivot_thresh=1.0)
    except RuntimeError as exc:
        pivot = _singular_pivot(A)
        where = f" at pivot {pivot}" if pivot is not None else " (pivot index unavailable)"
        raise SingularMatrixError(f"matrix is singular{where}", pivot=pivot) from exc
    d = lu.U.diagonal()
    if not np.all(np.isfinite(d)) or np.any(d == 0.0):
        pivot = _singular_pivot(A)
        raise SingularMatrixError(f"matrix is singular at pivot {pivot}", pivot=pivot)
    return Factorization(
        A.n_rows,
        lambda b: lu.solve(b),
        lambda b: lu.solve(b, trans="T"),
        kind="lu",
        matrix=A,
    )


def sparse_cholesky(A):
    """Exact sparse Cholesky (``A = U^T D^-1 U``) in natural ordering."""
    from .factorize import incomplete_cholesky

    if A.n_rows != A.n_cols:
        raise DimensionError(f"sparse_cholesky needs a square matrix, got {A.shape}")
    if not A.is_symmetric(rtol=1e-12):
        raise ValueError("sparse_cholesky needs a symmetric matrix")
    fac = incomplete_cholesky(A, droptol=0.0)
    return Factorization(A.n_rows, fac.solve, fac.solve, kind="cholesky", matrix=A)
