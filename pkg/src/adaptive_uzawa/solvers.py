"""
Uzawa iterations for nonsymmetric generalized saddle-point systems.

Four algorithms share one driver (:func:`solve`):

``exact_uzawa_2_1``
    exact velocity solve, adaptive multiplier step ``theta * tau_i``.
``inexact_uzawa_3_1``
    one preconditioned velocity step ``omega * A0^-1 r``, adaptive
    multiplier step ``delta * tau_i``.
``bpv_1_2``
    the fixed-parameter baseline (``delta`` and a fixed ``tau``).
``hu_zou_1_1``
    variable velocity step ``omega_i`` plus the adaptive multiplier step.
    Its convergence is not proven for nonsymmetric ``A``.

The adaptive ``tau_i`` minimizes ``||tau S_hat^-1 g - Op^-1 g||_Op`` over
``tau`` for an SPD operator ``Op`` (``H``, ``S_s`` or ``M``).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import BreakdownError, ConfigError, NotPositiveError, UzawaError
from .linalg import as_vector, dot, spmv, spmv_transpose
from .operators import (
    ApplyOperator,
    PreconditionerSpec,
    build_exact_solver,
    build_preconditioner,
    build_scaled_identity,
    schur_operator,
)

__all__ = [
    "ALGORITHMS",
    "IterationTrace",
    "SolverConfig",
    "TauStrategy",
    "TraceRecord",
    "UzawaState",
    "Workspace",
    "compute_tau",
    "gmres_solve",
    "prepare",
    "solve",
    "step_bpv",
    "step_exact_uzawa",
    "step_hu_zou",
    "step_inexact_uzawa",
]

log = logging.getLogger(__name__)

ALGORITHMS = ("exact_uzawa_2_1", "inexact_uzawa_3_1", "bpv_1_2", "hu_zou_1_1", "gmres")
TAU_KINDS = ("adaptive_H", "adaptive_Ss", "adaptive_M", "fixed")
DENOMINATOR_FLOOR = 1e-300
DIVERGENCE_FACTOR = 1e12


@dataclass(frozen=True)
class TauStrategy:
    kind: str = "adaptive_M"
    tau: Optional[float] = None

    def __post_init__(self):
        if self.kind not in TAU_KINDS:
            raise ConfigError(f"unknown tau strategy {self.kind!r}")
        if self.kind == "fixed" and not (self.tau is not None and self.tau > 0):
            raise ConfigError("a fixed tau must be positive")

    @classmethod
    def fixed(cls, tau):
        return cls("fixed", float(tau))

    @classmethod
    def from_obj(cls, obj):
        if isinstance(obj, TauStrategy):
            return obj
        if isinstance(obj, str):
            return cls(obj)
        d = dict(obj)
        return cls(d.get("kind", "adaptive_M"), d.get("tau"))

    def to_dict(self):
        return {"kind": self.kind} if self.tau is None else {"kind": self.kind, "tau": self.tau}


_DEFAULT_TAU = {
    "exact_uzawa_2_1": TauStrategy("adaptive_H"),
    "inexact_uzawa_3_1": TauStrategy("adaptive_M"),
    "bpv_1_2": TauStrategy.fixed(0.01),
    "hu_zou_1_1": TauStrategy("adaptive_M"),
    "gmres": None,
}


@dataclass(frozen=True)
class SolverConfig:
    """Algorithm selection and parameters.

    ``theta=None`` lets exact Uzawa pick half of its admissible upper bound
    from a dense spectral diagnosis (0.5 with a warning when the system is
    too large for one); Hu-Zou falls back to ``delta``.
    ``tau_strategy=None`` selects the algorithm's natural strategy.
    """

    algorithm: str = "inexact_uzawa_3_1"
    omega: float = 0.3
    delta: float = 0.3
    theta: Optional[float] = None
    tau_strategy: Optional[TauStrategy] = None
    schur_precond: PreconditionerSpec = PreconditionerSpec("scaled_identity", scale=1.0)
    a_precond: PreconditionerSpec = PreconditionerSpec("ic_droptol", droptol=1e-4)
    tol: float = 1e-6
    max_iter: int = 1000
    restart: int = 50

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        for name in ("omega", "delta", "tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.theta is not None and not self.theta > 0:
            raise ConfigError("theta must be positive")
        if self.max_iter < 0:
            raise ConfigError("max_iter must be nonnegative")
        if self.tau_strategy is None:
            object.__setattr__(self, "tau_strategy", _DEFAULT_TAU[self.algorithm])
        else:
            object.__setattr__(self, "tau_strategy", TauStrategy.from_obj(self.tau_strategy))
        if self.algorithm == "bpv_1_2" and self.tau_strategy.kind != "fixed":
            raise ConfigError("BPV needs a fixed tau")
        if self.tau_strategy is not None and self.tau_strategy.kind == "adaptive_Ss" \
                and self.algorithm != "exact_uzawa_2_1":
            raise ConfigError("adaptive_Ss needs exact A^-1 and A^-T actions (exact Uzawa only)")
        for name in ("schur_precond", "a_precond"):
            val = getattr(self, name)
            if isinstance(val, dict):
                object.__setattr__(self, name, PreconditionerSpec.from_dict(val))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown solver fields: {sorted(unknown)}")
        if "tau_strategy" in d and d["tau_strategy"] is not None:
            d["tau_strategy"] = TauStrategy.from_obj(d["tau_strategy"])
        return cls(**d)

    def to_dict(self):
        out = asdict(self)
        out["schur_precond"] = self.schur_precond.to_dict()
        out["a_precond"] = self.a_precond.to_dict()
        out["tau_strategy"] = None if self.tau_strategy is None else self.tau_strategy.to_dict()
        return out


@dataclass
class TraceRecord:
    iter: int
    res_x: float
    res_y: float
    res_combined: float
    tau: Optional[float] = None
    omega: Optional[float] = None
    wall_ns: int = 0


TRACE_COLUMNS = ("iter", "res_x", "res_y", "res_combined", "tau", "omega", "wall_ns")


@dataclass
class IterationTrace:
    """Per-iteration residual history.

    Record 0 describes the initial guess; record ``k`` the state after step
    ``k``.  ``iterations`` is therefore ``len(records) - 1``.
    """

    records: list = field(default_factory=list)
    status: str = "max_iter"
    tol: float = 0.0
    rhs_norm: float = 1.0
    metadata: dict = field(default_factory=dict)

    @property
    def iterations(self):
        return max(len(self.records) - 1, 0)

    @property
    def final_residual(self):
        """Final combined residual relative to ``||(f, g)||``."""
        if not self.records:
            return float("nan")
        return self.records[-1].res_combined / self.rhs_norm

    @property
    def relative_residuals(self):
        return np.array([r.res_combined for r in self.records]) / self.rhs_norm

    @property
    def taus(self):
        return [r.tau for r in self.records[1:]]

    @property
    def wall_seconds(self):
        return sum(r.wall_ns for r in self.records) * 1e-9

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            for r in self.records:
                row = {k: getattr(r, k) for k in TRACE_COLUMNS}
                if row["omega"] is None:
                    del row["omega"]
                fh.write(json.dumps(row) + "\n")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in self.records:
                w.writerow(["" if getattr(r, k) is None else repr(getattr(r, k)) if isinstance(getattr(r, k), float)
                            else getattr(r, k) for k in TRACE_COLUMNS])

    @classmethod
    def from_jsonl(cls, path):
        records = []
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    records.append(TraceRecord(**json.loads(line)))
        return cls(records=records)


@dataclass
class UzawaState:
    x: np.ndarray
    y: np.ndarray
    # cached f - A x - B y for the current (x, y), if known
    rx: Optional[np.ndarray] = None
    tau: Optional[float] = None
    omega: Optional[float] = None


@dataclass
class Workspace:
    """Operators a solve needs, built once from the system and config."""

    schur_inv: ApplyOperator
    theta: float = 1.0
    A_inv: Optional[ApplyOperator] = None
    A0_inv: Optional[ApplyOperator] = None
    A_hat_inv: Optional[ApplyOperator] = None
    tau_op: Optional[ApplyOperator] = None
    notes: dict = field(default_factory=dict)


def _tau_and_direction(g, schur_inv, op):
    """Return ``(tau, S_hat^-1 g)`` using a single preconditioner application."""
    s = schur_inv(g)
    if not np.any(g):
        return 1.0, s
    num = dot(g, s)
    den = dot(op(s), s)
    if not den > DENOMINATOR_FLOOR:
        raise BreakdownError(
            f"operator not positive on residual direction (denominator {den:.3e})"
        )
    return num / den, s


def compute_tau(g, schur_inv, numerator_op):
    """Adaptive relaxation parameter.

    ``tau = <g, S_hat^-1 g> / <Op S_hat^-1 g, S_hat^-1 g>`` and ``tau = 1``
    for an exactly zero ``g``.  Near-zero ``g`` still uses the formula;
    a denominator at or below 1e-300 raises :class:`BreakdownError`.
    """
    g = as_vector(g, schur_inv.dim, name="g")
    return _tau_and_direction(g, schur_inv, numerator_op)[0]


def _schur_preconditioner(spec, m):
    if spec.kind != "scaled_identity":
        raise ConfigError("the Schur preconditioner must be a scaled identity")
    return build_scaled_identity(m, spec.scale)


def _a0_from_As(sys, spec):
    return build_preconditioner(spec, sys.As)


def _a_hat(sys, spec):
    # Hu-Zou preconditions A itself; IC needs the symmetric part
    if spec.kind == "ic_droptol":
        return build_preconditioner(spec, sys.As)
    return build_preconditioner(spec, sys.A)


def _default_theta(sys, schur_inv, H):
    from .diagnostics import compute_alpha, compute_kappa, theorem21_window, beta
    from .linalg import DEFAULT_DENSE_CAP

    if max(sys.n, sys.m) > DEFAULT_DENSE_CAP:
        log.warning("theta not given and the system exceeds the dense cap; using theta = 0.5")
        return 0.5, {"theta_source": "fallback 0.5"}
    alpha = compute_alpha(sys.A)
    kappa1 = compute_kappa(schur_inv, H, sys.m, nullity=sys.meta.get("schur_nullity", 0))
    theta_max, _ = theorem21_window(alpha=alpha, beta1=beta(kappa1))
    return 0.5 * theta_max, {"theta_source": "0.5 * theta_max", "alpha": alpha, "kappa1": kappa1}


def prepare(sys, cfg, schur_inv=None, a0_inv=None):
    """Build the operators ``cfg`` requires.

    ``schur_inv`` and ``a0_inv`` override the preconditioners described by
    ``cfg.schur_precond`` and ``cfg.a_precond``.
    """
    if schur_inv is None:
        schur_inv = _schur_preconditioner(cfg.schur_precond, sys.m)
    ws = Workspace(schur_inv=schur_inv)
    alg = cfg.algorithm
    if alg == "gmres":
        return ws
    kind = cfg.tau_strategy.kind
    As_inv = None
    if alg == "exact_uzawa_2_1":
        ws.A_inv = build_exact_solver(sys.A)
    if alg in ("inexact_uzawa_3_1", "bpv_1_2") or kind == "adaptive_M":
        ws.A0_inv = a0_inv if a0_inv is not None else _a0_from_As(sys, cfg.a_precond)
    if alg == "hu_zou_1_1":
        ws.A_hat_inv = a0_inv if a0_inv is not None else _a_hat(sys, cfg.a_precond)
    if kind == "adaptive_H":
        As_inv = build_exact_solver(sys.As)
        ws.tau_op = schur_operator(sys, As_inv, "H")
    elif kind == "adaptive_M":
        ws.tau_op = schur_operator(sys, ws.A0_inv, "M")
    elif kind == "adaptive_Ss":
        ws.tau_op = schur_operator(sys, ws.A_inv, "Ss")
    if alg == "exact_uzawa_2_1":
        if cfg.theta is not None:
            ws.theta = cfg.theta
        else:
            H = ws.tau_op if kind == "adaptive_H" else schur_operator(sys, build_exact_solver(sys.As), "H")
            ws.theta, ws.notes = _default_theta(sys, schur_inv, H)
    elif alg == "hu_zou_1_1":
        ws.theta = cfg.theta if cfg.theta is not None else cfg.delta
    if alg == "bpv_1_2" and sys.D.nnz:
        ws.notes["bpv_d_extension"] = True
    return ws


def _rx(sys, state):
    if state.rx is not None:
        return state.rx
    return sys.f - spmv(sys.A, state.x) - spmv(sys.B, state.y)


def _multiplier_step(sys, x_new, y, ws, cfg, factor):
    g_new = spmv_transpose(sys.B, x_new) - spmv(sys.D, y) - sys.g
    if cfg.tau_strategy.kind == "fixed":
        tau = cfg.tau_strategy.tau
        s = ws.schur_inv(g_new)
    else:
        tau, s = _tau_and_direction(g_new, ws.schur_inv, ws.tau_op)
    return y + (factor * tau) * s, tau


def step_exact_uzawa(sys, state, cfg, ws):
    """Exact Uzawa: ``x' = x + A^-1 r``, ``y' = y + theta tau S_hat^-1 g'``."""
    x_new = state.x + ws.A_inv(_rx(sys, state))
    y_new, tau = _multiplier_step(sys, x_new, state.y, ws, cfg, ws.theta)
    return UzawaState(x_new, y_new, tau=tau)


def step_inexact_uzawa(sys, state, cfg, ws):
    """Inexact Uzawa: ``x' = x + omega A0^-1 r``, ``y' = y + delta tau S_hat^-1 g'``."""
    x_new = state.x + cfg.omega * ws.A0_inv(_rx(sys, state))
    y_new, tau = _multiplier_step(sys, x_new, state.y, ws, cfg, cfg.delta)
    return UzawaState(x_new, y_new, tau=tau)


def step_bpv(sys, state, cfg, ws):
    """BPV step with fixed ``delta`` and ``tau``.

    For ``D != 0`` the multiplier residual is generalized to
    ``B^T x' - D y - g`` (the classical method assumes ``D = 0``).
    """
    x_new = state.x + cfg.delta * ws.A0_inv(_rx(sys, state))
    y_new, tau = _multiplier_step(sys, x_new, state.y, ws, cfg, 1.0)
    return UzawaState(x_new, y_new, tau=tau)


def hu_zou_omega(A, f_i, r_i):
    """``<f, r> / <A r, r>``, or 1 for an exactly zero ``f``."""
    if not np.any(f_i):
        return 1.0
    den = dot(spmv(A, r_i), r_i)
    if not den > DENOMINATOR_FLOOR:
        raise BreakdownError(f"<A r, r> = {den:.3e} is not positive; variable omega breaks down")
    return dot(f_i, r_i) / den


def step_hu_zou(sys, state, cfg, ws):
    """Two variable parameters: ``omega_i`` for the velocity, ``tau_i`` for the multiplier."""
    f_i = _rx(sys, state)
    r_i = ws.A_hat_inv(f_i)
    omega = hu_zou_omega(sys.A, f_i, r_i)
    x_new = state.x + omega * r_i
    y_new, tau = _multiplier_step(sys, x_new, state.y, ws, cfg, ws.theta)
    return UzawaState(x_new, y_new, tau=tau, omega=omega)


STEPS = {
    "exact_uzawa_2_1": step_exact_uzawa,
    "inexact_uzawa_3_1": step_inexact_uzawa,
    "bpv_1_2": step_bpv,
    "hu_zou_1_1": step_hu_zou,
}


def solve(sys, cfg, x0=None, y0=None, *, schur_inv=None, a0_inv=None, workspace=None, callback=None):
    """Iterate until ``||(r_x, r_y)|| <= tol * ||(f, g)||`` or ``max_iter`` steps.

    Returns ``(x, y, trace)``.  A step error is re-raised as
    :class:`BreakdownError` carrying the iteration index and the partial
    trace (``exc.trace``).  A residual that becomes non-finite or grows by
    1e12 over its initial value ends the run with status ``breakdown``.
    """
    if cfg.algorithm == "gmres":
        return gmres_solve(sys, cfg, x0, y0)
    x = np.zeros(sys.n) if x0 is None else as_vector(x0, sys.n, name="x0").copy()
    y = np.zeros(sys.m) if y0 is None else as_vector(y0, sys.m, name="y0").copy()
    ws = workspace if workspace is not None else prepare(sys, cfg, schur_inv, a0_inv)
    step = STEPS[cfg.algorithm]
    rhs = sys.rhs_norm() or 1.0
    trace = IterationTrace(tol=cfg.tol, rhs_norm=rhs, metadata={
        "algorithm": cfg.algorithm, "theta": ws.theta, **ws.notes,
    })
    state = UzawaState(x, y)
    t0 = time.perf_counter_ns()
    rx, ry = sys.residuals(x, y)
    state.rx = rx
    first = _record(trace, 0, rx, ry, None, None, time.perf_counter_ns() - t0)
    if first.res_combined <= cfg.tol * rhs:
        trace.status = "converged"
        return state.x, state.y, trace
    for it in range(1, cfg.max_iter + 1):
        t0 = time.perf_counter_ns()
        try:
            state = step(sys, state, cfg, ws)
        except (UzawaError, ArithmeticError) as exc:
            trace.status = "breakdown"
            err = BreakdownError(f"iteration {it}: {exc}", iteration=it)
            err.trace = trace
            raise err from exc
        rx, ry = sys.residuals(state.x, state.y)
        state.rx = rx
        rec = _record(trace, it, rx, ry, state.tau, state.omega, time.perf_counter_ns() - t0)
        if callback is not None:
            callback(it, state)
        if not math.isfinite(rec.res_combined) or rec.res_combined > DIVERGENCE_FACTOR * max(first.res_combined, rhs):
            trace.status = "breakdown"
            break
        if rec.res_combined <= cfg.tol * rhs:
            trace.status = "converged"
            break
    return state.x, state.y, trace


def _record(trace, it, rx, ry, tau, omega, wall_ns):
    res_x = float(np.linalg.norm(rx))
    res_y = float(np.linalg.norm(ry))
    rec = TraceRecord(it, res_x, res_y, math.hypot(res_x, res_y), tau, omega, int(wall_ns))
    trace.records.append(rec)
    return rec


def gmres_solve(sys, cfg, x0=None, y0=None):
    """Restarted GMRES on the assembled block system, no preconditioning.

    One trace record per Arnoldi step, with the true block residuals of the
    current minimal-residual iterate.
    """
    K = sys.block_matrix()
    n = sys.n
    N = K.n_rows
    b = np.concatenate([sys.f, sys.g])
    z = np.zeros(N)
    if x0 is not None:
        z[:n] = as_vector(x0, n, name="x0")
    if y0 is not None:
        z[n:] = as_vector(y0, sys.m, name="y0")
    rhs = sys.rhs_norm() or 1.0
    trace = IterationTrace(tol=cfg.tol, rhs_norm=rhs, metadata={"algorithm": "gmres", "restart": cfg.restart})

    def split_record(it, zz, wall):
        rx, ry = sys.residuals(zz[:n], zz[n:])
        return _record(trace, it, rx, ry, None, None, wall)

    t0 = time.perf_counter_ns()
    rec = split_record(0, z, time.perf_counter_ns() - t0)
    if rec.res_combined <= cfg.tol * rhs:
        trace.status = "converged"
        return z[:n], z[n:], trace
    it = 0
    restart = max(1, cfg.restart)
    while it < cfg.max_iter:
        t0 = time.perf_counter_ns()
        r = b - spmv(K, z)
        beta0 = np.linalg.norm(r)
        if beta0 == 0.0:
            trace.status = "converged"
            break
        V = np.zeros((restart + 1, N))
        Hm = np.zeros((restart + 1, restart))
        V[0] = r / beta0
        cs = np.zeros(restart)
        sn = np.zeros(restart)
        e = np.zeros(restart + 1)
        e[0] = beta0
        done = False
        for j in range(restart):
            w = spmv(K, V[j])
            for i in range(j + 1):
                Hm[i, j] = np.dot(w, V[i])
                w = w - Hm[i, j] * V[i]
            Hm[j + 1, j] = np.linalg.norm(w)
            if Hm[j + 1, j] > 0:
                V[j + 1] = w / Hm[j + 1, j]
            for i in range(j):
                a, c = Hm[i, j], Hm[i + 1, j]
                Hm[i, j] = cs[i] * a + sn[i] * c
                Hm[i + 1, j] = -sn[i] * a + cs[i] * c
            rho = math.hypot(Hm[j, j], Hm[j + 1, j])
            cs[j], sn[j] = (1.0, 0.0) if rho == 0 else (Hm[j, j] / rho, Hm[j + 1, j] / rho)
            Hm[j, j] = rho
            Hm[j + 1, j] = 0.0
            e[j + 1] = -sn[j] * e[j]
            e[j] = cs[j] * e[j]
            coef = np.linalg.solve(np.triu(Hm[: j + 1, : j + 1]), e[: j + 1])
            zj = z + V[: j + 1].T @ coef
            it += 1
            rec = split_record(it, zj, time.perf_counter_ns() - t0)
            t0 = time.perf_counter_ns()
            if rec.res_combined <= cfg.tol * rhs:
                done = True
            if done or it >= cfg.max_iter:
                break
        z = zj
        if done:
            trace.status = "converged"
            break
    return z[:n], z[n:], trace
