"""
Threshold-dropping incomplete factorizations.

Both kernels work row by row in natural ordering.  While row ``i`` is being
eliminated, a *fill* entry (one outside the pattern of ``A``) is discarded
when its magnitude falls below ``droptol * ||A[i, :]||_2``.  Entries of the
original pattern are always kept, so ``droptol = 0`` reproduces the exact
factorization.
"""

from __future__ import annotations

import heapq

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from .errors import DimensionError, NotPositiveError, SingularMatrixError

__all__ = ["IncompleteCholesky", "IncompleteLU", "incomplete_cholesky", "incomplete_lu"]


def _to_csr(rows, n):
    indptr = np.zeros(n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(c) for c, _ in rows])
    if rows:
        indices = np.concatenate([c for c, _ in rows]).astype(np.int64)
        data = np.concatenate([v for _, v in rows]).astype(np.float64)
    else:
        indices = np.zeros(0, dtype=np.int64)
        data = np.zeros(0)
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


class IncompleteCholesky:
    """``P = U^T D^-1 U`` with ``U`` upper triangular and ``D = diag(U)``."""

    def __init__(self, U, droptol):
        self.U = U
        self.Ut = U.T.tocsr()
        self.d = U.diagonal()
        self.droptol = droptol
        self.n = U.shape[0]

    @property
    def nnz(self):
        return self.U.nnz

    def solve(self, b):
        t = spsolve_triangular(self.Ut, b, lower=True)
        return spsolve_triangular(self.U, self.d * t, lower=False)


class IncompleteLU:
    """``P = L U`` with ``L`` unit lower triangular."""

    def __init__(self, L, U, droptol):
        self.L = L
        self.U = U
        self.droptol = droptol
        self.n = U.shape[0]

    @property
    def nnz(self):
        return self.L.nnz + self.U.nnz

    def solve(self, b):
        t = spsolve_triangular(self.L, b, lower=True, unit_diagonal=True)
        return spsolve_triangular(self.U, t, lower=False)

    def solve_transpose(self, b):
        t = spsolve_triangular(self.U.T.tocsr(), b, lower=True)
        return spsolve_triangular(self.L.T.tocsr(), t, lower=False, unit_diagonal=True)


def incomplete_cholesky(A, droptol):
    """Up-looking threshold IC of a symmetric matrix.

    Row ``i`` of ``U`` is ``A[i, i:] - sum_k U[k, i] / U[k, k] * U[k, i:]``
    over the rows ``k < i`` whose upper part reaches column ``i``.  The
    multipliers are read back from ``U`` itself, which keeps the
    preconditioner exactly symmetric.

    Raises
    ------
    NotPositiveError
        If a pivot is not strictly positive.
    """
    n = A.n_rows
    if A.n_cols != n:
        raise DimensionError(f"incomplete_cholesky needs a square matrix, got {A.shape}")
    if droptol < 0:
        raise ValueError("droptol must be nonnegative")
    norms = A.row_norms()
    w = np.zeros(n)
    mark = np.full(n, -1, dtype=np.int64)
    orig = np.full(n, -1, dtype=np.int64)
    rows = []
    # column lists of U: for each column j, the rows k < j with U[k, j] != 0
    col_rows = [[] for _ in range(n)]
    col_vals = [[] for _ in range(n)]
    for i in range(n):
        cols, vals = A.row(i)
        upper = cols >= i
        ucols = cols[upper]
        w[ucols] = vals[upper]
        mark[ucols] = i
        orig[ucols] = i
        pattern = list(ucols)
        for k, uki in zip(col_rows[i], col_vals[i]):
            kcols, kvals = rows[k]
            sel = kcols >= i
            kc, kv = kcols[sel], kvals[sel]
            new = kc[mark[kc] != i]
            if new.size:
                w[new] = 0.0
                mark[new] = i
                pattern.extend(new)
            w[kc] -= (uki / kvals[0]) * kv
        pcols = np.sort(np.asarray(pattern, dtype=np.int64))
        pvals = w[pcols]
        w[pcols] = 0.0
        if pcols.size == 0 or pcols[0] != i:
            raise NotPositiveError(f"incomplete Cholesky: missing pivot in row {i}")
        thr = droptol * norms[i]
        keep = (pcols == i) | (orig[pcols] == i) | (np.abs(pvals) >= thr)
        if thr == 0.0:
            keep |= True
        pcols, pvals = pcols[keep], pvals[keep]
        if not pvals[0] > 0.0:
            raise NotPositiveError(f"incomplete Cholesky breakdown: pivot {i} is {pvals[0]:.3e}")
        rows.append((pcols, pvals))
        for j, v in zip(pcols[1:], pvals[1:]):
            if v != 0.0:
                col_rows[j].append(i)
                col_vals[j].append(v)
    return IncompleteCholesky(_to_csr(rows, n), droptol)


def incomplete_lu(A, droptol):
    """IKJ threshold ILU without pivoting.

    Raises
    ------
    SingularMatrixError
        If a zero pivot is met; ``pivot`` names the row.
    """
    n = A.n_rows
    if A.n_cols != n:
        raise DimensionError(f"incomplete_lu needs a square matrix, got {A.shape}")
    if droptol < 0:
        raise ValueError("droptol must be nonnegative")
    norms = A.row_norms()
    w = np.zeros(n)
    mark = np.full(n, -1, dtype=np.int64)
    orig = np.full(n, -1, dtype=np.int64)
    lrows, urows = [], []
    for i in range(n):
        cols, vals = A.row(i)
        w[cols] = vals
        mark[cols] = i
        orig[cols] = i
        thr = droptol * norms[i]
        pattern = list(cols)
        heap = [int(c) for c in cols if c < i]
        heapq.heapify(heap)
        lc, lv = [], []
        while heap:
            k = heapq.heappop(heap)
            ucols, uvals = urows[k]
            lik = w[k] / uvals[0]
            w[k] = 0.0
            if lik == 0.0 or (orig[k] != i and abs(lik) * abs(uvals[0]) < thr):
                continue
            lc.append(k)
            lv.append(lik)
            tail_c, tail_v = ucols[1:], uvals[1:]
            new = tail_c[mark[tail_c] != i]
            if new.size:
                w[new] = 0.0
                mark[new] = i
                pattern.extend(new)
                for c in new[new < i]:
                    heapq.heappush(heap, int(c))
            w[tail_c] -= lik * tail_v
        pcols = np.asarray(pattern, dtype=np.int64)
        pcols = np.sort(pcols[pcols >= i])
        pvals = w[pcols]
        w[np.asarray(pattern, dtype=np.int64)] = 0.0
        keep = (pcols == i) | (orig[pcols] == i) | (np.abs(pvals) >= thr)
        pcols, pvals = pcols[keep], pvals[keep]
        if pcols.size == 0 or pcols[0] != i or pvals[0] == 0.0:
            raise SingularMatrixError(f"incomplete LU: zero pivot in row {i}", pivot=i)
        urows.append((pcols, pvals))
        order = np.argsort(lc)
        lrows.append((np.asarray(lc, dtype=np.int64)[order], np.asarray(lv)[order]))
    L = _to_csr(lrows, n)
    U = _to_csr(urows, n)
    return IncompleteLU(L, U, droptol)
