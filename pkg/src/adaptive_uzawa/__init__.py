"""Adaptive Uzawa iterations for nonsymmetric generalized saddle-point systems."""

from .errors import (
    BreakdownError,
    ConfigError,
    DenseCapError,
    DimensionError,
    NotPositiveError,
    SingularMatrixError,
    UzawaError,
)
from .linalg import CsrMatrix, spmv, spmv_transpose, symmetric_part
from .operators import ApplyOperator, PreconditionerSpec, build_preconditioner, schur_operator
from .problems import OseenSpec, SyntheticSpec, generate_oseen, generate_synthetic, picard_navier_stokes
from .solvers import IterationTrace, SolverConfig, TauStrategy, compute_tau, solve
from .system import SaddleSystem

__all__ = [
    "ApplyOperator",
    "BreakdownError",
    "ConfigError",
    "CsrMatrix",
    "DenseCapError",
    "DimensionError",
    "IterationTrace",
    "NotPositiveError",
    "OseenSpec",
    "PreconditionerSpec",
    "SaddleSystem",
    "SingularMatrixError",
    "SolverConfig",
    "SyntheticSpec",
    "TauStrategy",
    "UzawaError",
    "build_preconditioner",
    "compute_tau",
    "generate_oseen",
    "generate_synthetic",
    "picard_navier_stokes",
    "schur_operator",
    "solve",
    "spmv",
    "spmv_transpose",
    "symmetric_part",
]

__version__ = "0.1.0"
