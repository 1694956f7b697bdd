"""
Preconditioners and composite Schur-block operators.

Everything the algorithms apply as a black box (``A0^-1``, ``S_hat^-1``,
``H``, ``M``, ``S``, ``S_s``) is an :class:`ApplyOperator`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DimensionError, NotPositiveError, SingularMatrixError
from .factorize import incomplete_cholesky, incomplete_lu
from .linalg import as_vector, sparse_lu, spmv, spmv_transpose, symmetric_part

__all__ = [
    "ApplyOperator",
    "PreconditionerSpec",
    "build_exact_solver",
    "build_ilu",
    "build_incomplete_cholesky",
    "build_jacobi",
    "build_preconditioner",
    "build_scaled_identity",
    "identity_operator",
    "matrix_operator",
    "schur_operator",
    "to_dense",
]

PRECONDITIONER_KINDS = ("jacobi", "ilu_droptol", "ic_droptol", "exact_factor", "scaled_identity")
MAX_SHIFT_RETRIES = 20
INITIAL_SHIFT = 1e-3


@dataclass(frozen=True)
class ApplyOperator:
    """A linear action ``v -> op(v)`` on vectors of length ``dim``.

    ``symmetric`` and ``definite`` are claims made by the builder; they are
    spot-checked in tests, not enforced on every call.
    """

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]
    symmetric: bool = False
    definite: bool = False
    name: str = "operator"
    info: dict = field(default_factory=dict, compare=False)
    apply_transpose: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __call__(self, x):
        x = as_vector(x, self.dim, name=f"input of {self.name}")
        return self.apply(x)

    def T(self, x):
        if self.symmetric:
            return self(x)
        if self.apply_transpose is None:
            raise NotImplementedError(f"{self.name} has no transpose action")
        x = as_vector(x, self.dim, name=f"input of {self.name}^T")
        return self.apply_transpose(x)


@dataclass(frozen=True)
class PreconditionerSpec:
    """Which preconditioner to build, e.g. ``{"kind": "ic_droptol", "droptol": 1e-4}``."""

    kind: str = "exact_factor"
    droptol: float = 1e-4
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in PRECONDITIONER_KINDS:
            raise ConfigError(f"unknown preconditioner kind {self.kind!r}")
        if self.kind in ("ilu_droptol", "ic_droptol") and not self.droptol > 0:
            raise ConfigError("drop tolerance must be positive")
        if not self.scale > 0:
            raise ConfigError("scale must be positive")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind", "exact_factor")
        droptol = d.pop("droptol", d.pop("drop_tolerance", 1e-4))
        scale = d.pop("scale", 1.0)
        if d:
            raise ConfigError(f"unknown preconditioner fields: {sorted(d)}")
        return cls(kind=kind, droptol=float(droptol), scale=float(scale))

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind in ("ilu_droptol", "ic_droptol"):
            out["droptol"] = self.droptol
        if self.kind == "scaled_identity":
            out["scale"] = self.scale
        return out

    def label(self):
        if self.kind == "jacobi":
            return "Jacobi"
        if self.kind == "ilu_droptol":
            return f"Ilu({self.droptol:g})"
        if self.kind == "ic_droptol":
            return f"Cholinc({self.droptol:g})"
        if self.kind == "exact_factor":
            return "Exact"
        return f"{self.scale:g}*I"


def identity_operator(n):
    return ApplyOperator(n, lambda x: x.copy(), symmetric=True, definite=True, name="I")


def matrix_operator(A, name="A"):
    """Wrap a square CsrMatrix as its forward action."""
    if A.n_rows != A.n_cols:
        raise DimensionError(f"{name} must be square, got {A.shape}")
    sym = A.is_symmetric(rtol=1e-14)
    return ApplyOperator(
        A.n_rows, lambda x: spmv(A, x), symmetric=sym, name=name,
        apply_transpose=lambda x: spmv_transpose(A, x),
    )


def to_dense(op):
    """Assemble an operator column by column (desk scale only)."""
    from .linalg import check_dense_cap

    check_dense_cap(op.dim, what=op.name)
    eye = np.eye(op.dim)
    return np.column_stack([op(eye[:, j]) for j in range(op.dim)])


def build_jacobi(A):
    """``diag(A)^-1``."""
    d = A.diagonal()
    zero = np.flatnonzero(d == 0.0)
    if zero.size:
        raise SingularMatrixError(f"Jacobi: zero diagonal entry in row {zero[0]}", pivot=int(zero[0]))
    inv = 1.0 / d
    return ApplyOperator(
        A.n_rows, lambda x: inv * x, symmetric=True, definite=bool(np.all(d > 0)),
        name="Jacobi", info={"kind": "jacobi"},
    )


def _shifted(A, shift):
    from .linalg import CsrMatrix

    return A + CsrMatrix.diag(shift * A.diagonal())


def build_incomplete_cholesky(A, droptol, max_retries=MAX_SHIFT_RETRIES):
    """Threshold IC of a symmetric matrix, with diagonal-shift retries.

    On a nonpositive pivot the factorization is repeated on
    ``A + alpha * diag(A)`` with ``alpha = 1e-3, 2e-3, 4e-3, ...``.  The shift
    finally used is recorded in ``info["shift"]``.
    """
    if A.n_rows != A.n_cols:
        raise DimensionError(f"IC needs a square matrix, got {A.shape}")
    if not A.is_symmetric(rtol=1e-12):
        raise ValueError("incomplete Cholesky needs a symmetric matrix")
    if np.any(A.diagonal() <= 0):
        raise NotPositiveError("incomplete Cholesky needs a positive diagonal")
    shift = 0.0
    for attempt in range(max_retries + 1):
        try:
            fac = incomplete_cholesky(A if shift == 0.0 else _shifted(A, shift), droptol)
            break
        except NotPositiveError:
            if attempt == max_retries:
                raise
            shift = INITIAL_SHIFT if shift == 0.0 else 2.0 * shift
    return ApplyOperator(
        A.n_rows, fac.solve, symmetric=True, definite=True,
        name=f"Cholinc({droptol:g})",
        info={"kind": "ic_droptol", "droptol": droptol, "shift": shift, "nnz": fac.nnz},
    )


def build_ilu(A, droptol, max_retries=MAX_SHIFT_RETRIES):
    """Threshold ILU, with the same diagonal-shift retry as IC."""
    if A.n_rows != A.n_cols:
        raise DimensionError(f"ILU needs a square matrix, got {A.shape}")
    shift = 0.0
    for attempt in range(max_retries + 1):
        try:
            fac = incomplete_lu(A if shift == 0.0 else _shifted(A, shift), droptol)
            break
        except SingularMatrixError:
            if attempt == max_retries:
                raise
            shift = INITIAL_SHIFT if shift == 0.0 else 2.0 * shift
    return ApplyOperator(
        A.n_rows, fac.solve, symmetric=False, name=f"Ilu({droptol:g})",
        info={"kind": "ilu_droptol", "droptol": droptol, "shift": shift, "nnz": fac.nnz},
        apply_transpose=fac.solve_transpose,
    )


def build_exact_solver(A):
    """``A^-1`` through a stored sparse LU factorization."""
    fac = sparse_lu(A)
    sym = A.is_symmetric(rtol=1e-14)
    return ApplyOperator(
        A.n_rows, fac.solve, symmetric=sym, name="Exact",
        info={"kind": "exact_factor"}, apply_transpose=fac.solve_transpose,
    )


def build_scaled_identity(m, scale=1.0):
    """``(scale * I)^-1``."""
    if not scale > 0:
        raise ConfigError("scale must be positive")
    inv = 1.0 / float(scale)
    return ApplyOperator(
        m, lambda x: inv * x, symmetric=True, definite=True, name=f"({scale:g}*I)^-1",
        info={"kind": "scaled_identity", "scale": float(scale)},
    )


def build_preconditioner(spec, A):
    """Build the inverse action described by ``spec`` for matrix ``A``."""
    if spec.kind == "jacobi":
        return build_jacobi(A)
    if spec.kind == "ilu_droptol":
        return build_ilu(A, spec.droptol)
    if spec.kind == "ic_droptol":
        return build_incomplete_cholesky(A, spec.droptol)
    if spec.kind == "exact_factor":
        return build_exact_solver(A)
    return build_scaled_identity(A.n_rows, spec.scale)


def schur_operator(sys, inner, kind="H"):
    """``v -> B^T inner(B v) + D v``.

    ``kind`` is one of ``H`` (inner = A_s^-1), ``M`` (inner = A0^-1),
    ``S`` (inner = A^-1) or ``Ss``, where the inner action is the symmetric
    part ``(A^-1 + A^-T) / 2`` and ``inner`` must provide ``T``.
    """
    B, D = sys.B, sys.D
    if inner.dim != B.n_rows:
        raise DimensionError(f"inner operator has dimension {inner.dim}, B has {B.n_rows} rows")
    if kind not in ("H", "M", "S", "Ss"):
        raise ValueError(f"unknown Schur operator kind {kind!r}")

    if kind == "Ss":
        def act(z):
            return 0.5 * (inner(z) + inner.T(z))
    else:
        act = inner

    def apply(v):
        return spmv_transpose(B, act(spmv(B, v))) + spmv(D, v)

    symmetric = kind in ("H", "M", "Ss") and (kind == "Ss" or inner.symmetric)
    return ApplyOperator(
        B.n_cols, apply, symmetric=symmetric, definite=symmetric, name=kind,
        info={"kind": kind, "inner": inner.name},
    )
