"""
Desk-scale spectral constants and convergence-window evaluators.

Every quantity here is computed with dense eigen/singular-value solves, so
inputs above the dense cap are refused rather than approximated.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import NotPositiveError
from .linalg import check_dense_cap, dense_eig_sym
from .operators import build_exact_solver, schur_operator, to_dense

__all__ = [
    "SpectralReport",
    "Theorem31Window",
    "alpha_with_maximizer",
    "beta",
    "compute_alpha",
    "compute_kappa",
    "compute_kappa0",
    "compute_lbb_constant",
    "kantorovich_check",
    "kantorovich_ratio",
    "spectral_report",
    "theorem21_window",
    "theorem21_window_ss",
    "theorem31_window",
]


def beta(kappa):
    return (kappa - 1.0) / (kappa + 1.0)


def _as_spd_cholesky(M, what):
    try:
        return scipy.linalg.cholesky(M, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NotPositiveError(f"{what} is not positive definite") from exc


def alpha_with_maximizer(A, cap=None):
    """Return ``(alpha, x, y)`` with ``<A x, y> = alpha`` and unit ``A_s``-norms.

    ``alpha`` is the largest singular value of ``L^-1 A L^-T`` where
    ``A_s = L L^T``; it has the same singular values as the symmetric
    similarity form ``A_s^-1/2 A A_s^-1/2``.
    """
    check_dense_cap(A.n_rows, cap)
    Ad = A.to_dense()
    As = 0.5 * (Ad + Ad.T)
    L = _as_spd_cholesky(As, "symmetric part of A")
    X = scipy.linalg.solve_triangular(L, Ad, lower=True)
    C = scipy.linalg.solve_triangular(L, X.T, lower=True).T
    U, s, Vt = np.linalg.svd(C)
    x = scipy.linalg.solve_triangular(L.T, Vt[0], lower=False)
    y = scipy.linalg.solve_triangular(L.T, U[:, 0], lower=False)
    return float(s[0]), x, y


def compute_alpha(A, cap=None):
    """Smallest ``alpha`` with ``<Ax, y> <= alpha ||x||_As ||y||_As``."""
    return alpha_with_maximizer(A, cap)[0]


def _pencil_eigs(schur_inv, op, m, cap=None, nullity=0):
    check_dense_cap(m, cap)
    P = to_dense(schur_inv)
    P = 0.5 * (P + P.T)
    Op = to_dense(op)
    L = _as_spd_cholesky(P, "Schur preconditioner")
    # eig(S_hat^-1 Op) = eig(L^T Op L) with S_hat^-1 = L L^T
    lam, _ = dense_eig_sym(0.5 * ((L.T @ Op @ L) + (L.T @ Op @ L).T), cap=cap)
    if nullity:
        # a known kernel (e.g. constant pressures) that the iterates never enter
        if lam[nullity - 1] > 1e-10 * abs(lam[-1]):
            raise NotPositiveError(f"expected {nullity} null eigenvalue(s), smallest are {lam[:nullity]}")
        lam = lam[nullity:]
    return lam


def compute_kappa(schur_inv, op, m, cap=None, nullity=0):
    """Condition number of the SPD pencil ``Op v = lam S_hat v``.

    ``nullity`` eigenvalues known to be zero (a kernel shared by ``B`` and
    ``D``) are discarded first.
    """
    lam = _pencil_eigs(schur_inv, op, m, cap, nullity)
    if not lam[0] > 0:
        raise NotPositiveError(f"operator not SPD (smallest pencil eigenvalue {lam[0]:.3e})")
    return float(lam[-1] / lam[0])


def compute_kappa0(As, a0_inv, cap=None):
    """Condition number of the pencil ``A_s v = lam A0 v``.

    This is the ``kappa0`` of ``<A0 v,v> <= <A_s v,v> <= kappa0 <A0 v,v>``
    once ``A0`` is scaled so that the lower bound is tight.
    """
    check_dense_cap(As.n_rows, cap)
    P = to_dense(a0_inv)
    L = _as_spd_cholesky(0.5 * (P + P.T), "A0")
    # eig(A0^-1 A_s) = eig(L^T A_s L) with A0^-1 = L L^T
    C = L.T @ As.to_dense() @ L
    lam, _ = dense_eig_sym(0.5 * (C + C.T), cap=cap)
    return float(lam[-1] / lam[0])


def compute_lbb_constant(sys, cap=None):
    """Smallest eigenvalue of ``B^T A_s^-1 B`` (0 when the LBB condition fails)."""
    check_dense_cap(max(sys.n, sys.m), cap)
    As = sys.As.to_dense()
    Bd = sys.B.to_dense()
    L = _as_spd_cholesky(As, "symmetric part of A")
    W = scipy.linalg.solve_triangular(L, Bd, lower=True)
    G = W.T @ W
    lam = scipy.linalg.eigvalsh(G)[sys.meta.get("schur_nullity", 0):]
    scale = max(abs(lam[-1]), 0.0)
    if scale == 0.0 or lam[0] < 1e-12 * scale:
        return 0.0
    return float(lam[0])


def theorem21_window(report=None, *, alpha=None, beta1=None):
    """``(theta_max, rate)`` for exact Uzawa.

    ``rate(theta) = 1 - theta (1 - beta1) / alpha^2`` bounds the squared-norm
    contraction for ``0 < theta < theta_max``.
    """
    if report is not None:
        alpha, beta1 = report.alpha, report.beta1
    theta_max = (1.0 - beta1) / (alpha**2 * (1.0 + beta1) ** 2)

    def rate(theta):
        return 1.0 - theta * (1.0 - beta1) / alpha**2

    return theta_max, rate


def theorem21_window_ss(report=None, *, alpha=None, beta2=None):
    """Same window for the ``S_s``-based tau: ``(1-b2)/(alpha^4 (1+b2)^2)``."""
    if report is not None:
        alpha, beta2 = report.alpha, report.beta2
    theta_max = (1.0 - beta2) / (alpha**4 * (1.0 + beta2) ** 2)

    def rate(theta):
        return 1.0 - theta * (1.0 - beta2)

    return theta_max, rate


@dataclass(frozen=True)
class Theorem31Window:
    defined: bool
    delta: float
    alpha: float
    kappa0: float
    beta3: float
    omega_max: float
    Delta: float
    reason: str = ""

    def omega_bar(self, omega):
        k = self.kappa0
        return 1.0 - omega + omega**2 * self.alpha**2 * k**2 / (1.0 - omega * k)

    def rho_bar(self, omega):
        a = omega / 2.0 - omega * self.Delta
        return (a + math.sqrt(a * a + 4.0 * (1.0 - omega / 2.0))) / 2.0

    def contains(self, omega):
        return self.defined and 0.0 < omega < self.omega_max

    def delta_thresholds(self):
        """The three ``delta`` bounds that appear in the convergence statement."""
        return {
            "delta<1/2": 0.5,
            "delta<1/(4(1+beta3))": 1.0 / (4.0 * (1.0 + self.beta3)),
            "delta<1/(4 alpha^2 kappa0^2)": 1.0 / (4.0 * self.alpha**2 * self.kappa0**2),
        }


def theorem31_window(report=None, delta=None, *, alpha=None, kappa0=None, beta3=None):
    """``omega`` window, ``Delta`` and the rate functions for inexact Uzawa."""
    if report is not None:
        alpha, kappa0, beta3 = report.alpha, report.kappa0, report.beta3
    if delta is None or not 0.0 < delta < 0.5:
        return Theorem31Window(False, delta if delta is not None else float("nan"), alpha, kappa0,
                               beta3, float("nan"), float("nan"), reason="delta outside (0, 1/2)")
    omega_max = min(
        1.0 / (3.0 * alpha**2 * kappa0**2),
        (1.0 + kappa0 * (1.0 - delta * (1.0 + beta3))) / ((alpha**2 * kappa0 + 1.0) * kappa0),
    )
    Delta = delta * (1.0 - beta3) / kappa0
    return Theorem31Window(True, delta, alpha, kappa0, beta3, omega_max, Delta)


def kantorovich_ratio(M, v, lam=None):
    """``(<v,v>^2 / (<Mv,v><M^-1 v,v>)) / (4 l1 l2 / (l1 + l2)^2)``."""
    if lam is None:
        lam = scipy.linalg.eigvalsh(M)
    l1, l2 = lam[0], lam[-1]
    vv = v @ v
    lhs = vv * vv / ((M @ v) @ v * (np.linalg.solve(M, v) @ v))
    rhs = 4.0 * l1 * l2 / (l1 + l2) ** 2
    return lhs / rhs


def kantorovich_check(M, trials=1000, rng=None):
    """Worst ratio of the Kantorovich inequality over random vectors (>= 1)."""
    M = np.asarray(M, dtype=float)
    check_dense_cap(M.shape[0])
    rng = np.random.default_rng(rng)
    lam = scipy.linalg.eigvalsh(M)
    if not lam[0] > 0:
        raise NotPositiveError("matrix is not positive definite")
    V = rng.standard_normal((trials, M.shape[0]))
    MV = V @ M
    MinvV = np.linalg.solve(M, V.T).T
    vv = np.einsum("ij,ij->i", V, V)
    lhs = vv**2 / (np.einsum("ij,ij->i", MV, V) * np.einsum("ij,ij->i", MinvV, V))
    rhs = 4.0 * lam[0] * lam[-1] / (lam[0] + lam[-1]) ** 2
    return float(np.min(lhs / rhs))


@dataclass
class SpectralReport:
    alpha: Optional[float] = None
    kappa0: Optional[float] = None
    kappa1: Optional[float] = None
    kappa2: Optional[float] = None
    kappa3: Optional[float] = None
    beta1: Optional[float] = None
    beta2: Optional[float] = None
    beta3: Optional[float] = None
    c0: Optional[float] = None
    theta_max: Optional[float] = None
    theta_max_Ss: Optional[float] = None
    omega: Optional[float] = None
    delta: Optional[float] = None
    omega_max: Optional[float] = None
    delta_max: Optional[float] = 0.5
    omega_bar: Optional[float] = None
    Delta: Optional[float] = None
    rho_bar: Optional[float] = None
    delta_thresholds: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def spectral_report(sys, schur_inv, a0_inv, omega=0.3, delta=0.3, cap=None):
    """Evaluate every constant for one system and preconditioner pair."""
    rep = SpectralReport(omega=omega, delta=delta)
    k = sys.meta.get("schur_nullity", 0)
    if k:
        rep.notes.append(f"{k} null direction(s) of the Schur pencil excluded")
    rep.alpha = compute_alpha(sys.A, cap)
    rep.c0 = compute_lbb_constant(sys, cap)
    As_inv = build_exact_solver(sys.As)
    H = schur_operator(sys, As_inv, "H")
    rep.kappa1 = compute_kappa(schur_inv, H, sys.m, cap, k)
    A_inv = build_exact_solver(sys.A)
    Ss = schur_operator(sys, A_inv, "Ss")
    rep.kappa2 = compute_kappa(schur_inv, Ss, sys.m, cap, k)
    if not a0_inv.symmetric:
        rep.notes.append(f"A0 ({a0_inv.name}) is not exactly symmetric; its symmetric part was used")
    rep.kappa0 = compute_kappa0(sys.As, a0_inv, cap)
    M = schur_operator(sys, a0_inv, "M")
    rep.kappa3 = compute_kappa(schur_inv, M, sys.m, cap, k)
    rep.beta1, rep.beta2, rep.beta3 = beta(rep.kappa1), beta(rep.kappa2), beta(rep.kappa3)
    rep.theta_max = theorem21_window(rep)[0]
    rep.theta_max_Ss = theorem21_window_ss(rep)[0]
    win = theorem31_window(rep, delta)
    if win.defined:
        rep.omega_max = win.omega_max
        rep.Delta = win.Delta
        rep.delta_thresholds = win.delta_thresholds()
        if omega < 1.0 / rep.kappa0:
            rep.omega_bar = win.omega_bar(omega)
        rep.rho_bar = win.rho_bar(omega)
        inside = win.contains(omega)
        rep.verdicts.append(
            f"omega={omega:g} {'inside' if inside else 'outside'} inexact-Uzawa window (omega_max={win.omega_max:.4g})"
        )
    else:
        rep.verdicts.append(f"delta={delta:g}: inexact-Uzawa window undefined ({win.reason})")
    rep.verdicts.append(
        f"LBB constant c0={rep.c0:.4g} ({'holds' if rep.c0 > 0 else 'fails'})"
    )
    rep.verdicts.append(f"exact-Uzawa admissible theta in (0, {rep.theta_max:.4g})")
    return rep
