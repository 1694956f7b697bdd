"""
Test-problem generators.

Oseen / Navier-Stokes on the unit square use a MAC (marker-and-cell)
staggered grid with ``N`` cells per side and ``h = 1/N``:

* ``u`` lives on interior vertical edges ``(x_i, y_{j+1/2})``, ``i = 1..N-1``;
* ``v`` lives on interior horizontal edges ``(x_{i+1/2}, y_j)``, ``j = 1..N-1``;
* ``p`` lives at cell centres.

The velocity block is ``nu * L + C`` where ``L`` is the 5-point vector
Laplacian (wall values folded in with ghost cells) and ``C`` is the
skew-symmetric central-difference convection operator
``((w . grad) u + div(w u)) / 2``, built from face fluxes of the wind.
Because ``C`` is exactly skew, the symmetric part of the velocity block is
exactly ``nu * L``.  ``B`` is the discrete gradient, so ``B^T`` is minus the
discrete divergence.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
import scipy.linalg

from .errors import ConfigError, UzawaError
from .linalg import CsrMatrix
from .system import SaddleSystem

__all__ = [
    "DiscreteWind",
    "OseenSpec",
    "PicardResult",
    "SyntheticSpec",
    "assemble_convection",
    "assemble_gradient",
    "assemble_laplacian",
    "cell_centered_fields",
    "cavity_wind",
    "export_fields",
    "generate_oseen",
    "generate_synthetic",
    "mac_sizes",
    "picard_navier_stokes",
    "split_velocity",
]


def cavity_wind(x, y):
    """The recirculating wind ``(8x(1-x)(2y-1), -8y(1-y)(2x-1))``."""
    return 8.0 * x * (1.0 - x) * (2.0 * y - 1.0), -8.0 * y * (1.0 - y) * (2.0 * x - 1.0)


def _zero_wind(x, y):
    return np.zeros_like(x), np.zeros_like(y)


@dataclass(frozen=True, eq=False)
class DiscreteWind:
    """A MAC velocity vector ``[u; v]`` used as the convecting field."""

    velocity: np.ndarray


@dataclass(frozen=True)
class OseenSpec:
    grid_n: int = 16
    nu: float = 1.0
    wind: Union[str, tuple, DiscreteWind] = "cavity_wind"
    d_mode: str = "none"
    eps: float = 1e-2
    pressure_fix: str = "pin_first_dof"
    lid: float = 1.0

    def __post_init__(self):
        if self.grid_n < 4:
            raise ConfigError("grid_n must be at least 4")
        if not self.nu > 0:
            raise ConfigError("nu must be positive")
        if self.d_mode not in ("none", "pressure_stabilization"):
            raise ConfigError(f"unknown d_mode {self.d_mode!r}")
        if self.d_mode == "pressure_stabilization" and not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.pressure_fix not in ("pin_first_dof", "project_constants"):
            raise ConfigError(f"unknown pressure_fix {self.pressure_fix!r}")
        if isinstance(self.wind, list):
            object.__setattr__(self, "wind", tuple(self.wind))
        if isinstance(self.wind, str) and self.wind not in ("cavity_wind", "zero"):
            raise ConfigError(f"unknown wind {self.wind!r}")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("type", None)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown Oseen fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        wind = self.wind if not isinstance(self.wind, DiscreteWind) else "discrete"
        return {"type": "oseen", "grid_n": self.grid_n, "nu": self.nu, "wind": wind,
                "d_mode": self.d_mode, "eps": self.eps, "pressure_fix": self.pressure_fix,
                "lid": self.lid}


def mac_sizes(N):
    """``(n_u, n_v, n_p)`` for an ``N x N`` MAC grid (all pressures)."""
    return N * (N - 1), (N - 1) * N, N * N


def _u_index(N, i, j):
    # i = 1..N-1, j = 0..N-1
    return j * (N - 1) + (i - 1)


def _v_index(N, i, j):
    # i = 0..N-1, j = 1..N-1
    return N * (N - 1) + (j - 1) * N + i


def split_velocity(x, N):
    """Return ``u`` of shape ``(N, N+1)`` and ``v`` of shape ``(N+1, N)``, walls included.

    ``u[j, i]`` is the value at ``(x_i, y_{j+1/2})`` and ``v[j, i]`` the value at
    ``(x_{i+1/2}, y_j)``.
    """
    nu_, _, _ = mac_sizes(N)
    u = np.zeros((N, N + 1))
    v = np.zeros((N + 1, N))
    u[:, 1:N] = np.asarray(x[:nu_]).reshape(N, N - 1)
    v[1:N, :] = np.asarray(x[nu_:]).reshape(N - 1, N)
    return u, v


def _wind_samples(N, wind):
    """Wind components at the four face families of the MAC control volumes.

    Returns ``(w1_cc, w2_vx, w1_vx, w2_cc)``: ``w1`` at cell centres (shape
    ``(N, N)``, index ``[j, i]``), ``w2`` at vertices (shape ``(N+1, N+1)``),
    ``w1`` at vertices and ``w2`` at cell centres.
    """
    h = 1.0 / N
    xc = (np.arange(N) + 0.5) * h
    xv = np.arange(N + 1) * h
    if isinstance(wind, DiscreteWind):
        u, v = split_velocity(wind.velocity, N)
        w1_cc = 0.5 * (u[:, :-1] + u[:, 1:])
        w2_cc = 0.5 * (v[:-1, :] + v[1:, :])
        w2_vx = np.zeros((N + 1, N + 1))
        w2_vx[:, 1:N] = 0.5 * (v[:, :-1] + v[:, 1:])
        w1_vx = np.zeros((N + 1, N + 1))
        w1_vx[1:N, :] = 0.5 * (u[:-1, :] + u[1:, :])
        return w1_cc, w2_vx, w1_vx, w2_cc
    if isinstance(wind, str):
        fn = cavity_wind if wind == "cavity_wind" else _zero_wind
    else:
        c1, c2 = (float(c) for c in wind)

        def fn(x, y):
            return np.full_like(x, c1), np.full_like(y, c2)

    Xc, Yc = np.meshgrid(xc, xc)
    Xv, Yv = np.meshgrid(xv, xv)
    w1_cc, w2_cc = fn(Xc, Yc)
    w1_vx, w2_vx = fn(Xv, Yv)
    return w1_cc, w2_vx, w1_vx, w2_cc


def assemble_laplacian(N, lid=1.0):
    """5-point ``-Laplacian`` on the MAC velocity unknowns and its wall load.

    Tangential wall values enter through ghost cells (``ghost = 2 * wall - interior``);
    the lid drives ``u = lid`` on ``y = 1``.  Returns ``(L, rhs)``.
    """
    h2 = 1.0 / (N * N)
    n_u, n_v, _ = mac_sizes(N)
    n = n_u + n_v
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)

    def add(r, c, val):
        rows.append(r)
        cols.append(c)
        vals.append(val)

    for j in range(N):
        for i in range(1, N):
            r = _u_index(N, i, j)
            diag = 4.0
            for di in (-1, 1):
                ii = i + di
                if 1 <= ii <= N - 1:
                    add(r, _u_index(N, ii, j), -1.0 / h2)
            for dj in (-1, 1):
                jj = j + dj
                if 0 <= jj <= N - 1:
                    add(r, _u_index(N, i, jj), -1.0 / h2)
                else:
                    wall = lid if jj == N else 0.0
                    diag += 1.0
                    rhs[r] += 2.0 * wall / h2
            add(r, r, diag / h2)
    for j in range(1, N):
        for i in range(N):
            r = _v_index(N, i, j)
            diag = 4.0
            for dj in (-1, 1):
                jj = j + dj
                if 1 <= jj <= N - 1:
                    add(r, _v_index(N, i, jj), -1.0 / h2)
            for di in (-1, 1):
                ii = i + di
                if 0 <= ii <= N - 1:
                    add(r, _v_index(N, ii, j), -1.0 / h2)
                else:
                    diag += 1.0
            add(r, r, diag / h2)
    return CsrMatrix.from_coo((n, n), rows, cols, vals), rhs


def assemble_convection(N, wind, lid=1.0):
    """Skew-symmetric convection matrix and the load from known wall values."""
    h = 1.0 / N
    w1_cc, w2_vx, w1_vx, w2_cc = _wind_samples(N, wind)
    n_u, n_v, _ = mac_sizes(N)
    n = n_u + n_v
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    c = 1.0 / (2.0 * h)
    for j in range(N):
        for i in range(1, N):
            r = _u_index(N, i, j)
            # east / west faces sit at cell centres (i, j) and (i-1, j)
            for ii, flux in ((i + 1, w1_cc[j, i]), (i - 1, -w1_cc[j, i - 1])):
                if 1 <= ii <= N - 1 and flux != 0.0:
                    rows.append(r); cols.append(_u_index(N, ii, j)); vals.append(c * flux)
            # north / south faces sit at vertices (i, j+1) and (i, j)
            for jj, flux in ((j + 1, w2_vx[j + 1, i]), (j - 1, -w2_vx[j, i])):
                if 0 <= jj <= N - 1:
                    if flux != 0.0:
                        rows.append(r); cols.append(_u_index(N, i, jj)); vals.append(c * flux)
                elif jj == N:
                    rhs[r] -= c * flux * lid
    for j in range(1, N):
        for i in range(N):
            r = _v_index(N, i, j)
            for ii, flux in ((i + 1, w1_vx[j, i + 1]), (i - 1, -w1_vx[j, i])):
                if 0 <= ii <= N - 1 and flux != 0.0:
                    rows.append(r); cols.append(_v_index(N, ii, j)); vals.append(c * flux)
            for jj, flux in ((j + 1, w2_cc[j, i]), (j - 1, -w2_cc[j - 1, i])):
                if 1 <= jj <= N - 1 and flux != 0.0:
                    rows.append(r); cols.append(_v_index(N, i, jj)); vals.append(c * flux)
    return CsrMatrix.from_coo((n, n), rows, cols, vals), rhs


def assemble_gradient(N):
    """Discrete gradient from all ``N*N`` cell pressures to the velocity unknowns."""
    h = 1.0 / N
    n_u, n_v, n_p = mac_sizes(N)
    rows, cols, vals = [], [], []
    for j in range(N):
        for i in range(1, N):
            r = _u_index(N, i, j)
            rows += [r, r]; cols += [j * N + i, j * N + i - 1]; vals += [1.0 / h, -1.0 / h]
    for j in range(1, N):
        for i in range(N):
            r = _v_index(N, i, j)
            rows += [r, r]; cols += [j * N + i, (j - 1) * N + i]; vals += [1.0 / h, -1.0 / h]
    return CsrMatrix.from_coo((n_u + n_v, n_p), rows, cols, vals)


def generate_oseen(spec, check=None):
    """Assemble the MAC Oseen saddle system described by ``spec``.

    With ``pin_first_dof`` the pressure in cell 0 is fixed to zero (its column
    of ``B`` is removed).  With ``project_constants`` all cell pressures are
    kept; ``B`` then has the constants in its kernel, multiplier updates stay
    in the mean-zero subspace, and exported pressures are mean-shifted.
    """
    N = spec.grid_n
    h = 1.0 / N
    L, load_l = assemble_laplacian(N, spec.lid)
    C, load_c = assemble_convection(N, spec.wind, spec.lid)
    A = L.scaled(spec.nu) + C
    f = spec.nu * load_l + load_c
    G = assemble_gradient(N)
    if spec.pressure_fix == "pin_first_dof":
        B = G.submatrix(cols=np.arange(1, N * N))
    else:
        B = G
    m = B.n_cols
    if spec.d_mode == "pressure_stabilization":
        D = CsrMatrix.identity(m, spec.eps * h * h)
    else:
        D = CsrMatrix.zeros(m, m)
    if check is None:
        check = A.n_rows <= 600
    return SaddleSystem(
        A, B, D, f, np.zeros(m), check=check,
        meta={"problem": "oseen", "grid_n": N, "nu": spec.nu, "pressure_fix": spec.pressure_fix,
              "d_mode": spec.d_mode,
              "schur_nullity": int(spec.pressure_fix == "project_constants" and spec.d_mode == "none")},
    )


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 20
    m: int = 8
    target_alpha: float = 1.5
    skew_strength: float = 1.0
    d_rank: int = 0
    seed: int = 0
    spectrum: tuple = (1.0, 10.0)

    def __post_init__(self):
        if not 0 < self.m <= self.n:
            raise ConfigError("need 0 < m <= n")
        if self.target_alpha < 1.0:
            raise ConfigError("target_alpha must be >= 1")
        if not 0 <= self.d_rank <= self.m:
            raise ConfigError("d_rank must lie in [0, m]")
        if isinstance(self.spectrum, list):
            object.__setattr__(self, "spectrum", tuple(self.spectrum))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("type", None)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthetic fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return {"type": "synthetic", "n": self.n, "m": self.m, "target_alpha": self.target_alpha,
                "skew_strength": self.skew_strength, "d_rank": self.d_rank, "seed": self.seed,
                "spectrum": list(self.spectrum)}


def _alpha_dense(As, K, t):
    L = scipy.linalg.cholesky(As, lower=True)
    C = scipy.linalg.solve_triangular(L, As + t * K, lower=True)
    C = scipy.linalg.solve_triangular(L, C.T, lower=True).T
    return float(np.linalg.norm(C, 2))


def generate_synthetic(spec):
    """Random dense-stored saddle system with a planted solution.

    ``A = Q diag(s) Q^T + t K`` with ``K`` skew; ``t`` is chosen so that the
    constant ``alpha`` equals ``target_alpha``.  For a skew ``K`` the
    similarity form is normal, so ``alpha^2 = 1 + t^2 mu^2`` with ``mu`` the
    spectral radius of ``A_s^-1/2 K A_s^-1/2``; bisection is the fallback.
    The planted ``(x, y)`` is stored in ``meta``.
    """
    rng = np.random.default_rng(spec.seed)
    n, m = spec.n, spec.m
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    s = rng.uniform(spec.spectrum[0], spec.spectrum[1], n)
    As = (Q * s) @ Q.T
    As = 0.5 * (As + As.T)
    G = rng.standard_normal((n, n))
    K = spec.skew_strength * (G - G.T) / 2.0
    t = 0.0
    if spec.skew_strength != 0.0 and spec.target_alpha > 1.0:
        L = scipy.linalg.cholesky(As, lower=True)
        W = scipy.linalg.solve_triangular(L, K, lower=True)
        W = scipy.linalg.solve_triangular(L, W.T, lower=True).T
        mu = float(np.max(np.abs(np.linalg.eigvals(W))))
        t = math.sqrt(spec.target_alpha**2 - 1.0) / mu
        alpha = _alpha_dense(As, K, t)
        if not 0.9 * spec.target_alpha <= alpha <= 1.1 * spec.target_alpha:
            lo, hi = 0.0, 2.0 * t + 1.0
            while _alpha_dense(As, K, hi) < spec.target_alpha:
                hi *= 2.0
            for _ in range(100):
                t = 0.5 * (lo + hi)
                alpha = _alpha_dense(As, K, t)
                if abs(alpha - spec.target_alpha) <= 1e-3 * spec.target_alpha:
                    break
                lo, hi = (t, hi) if alpha < spec.target_alpha else (lo, t)
            else:
                raise UzawaError("could not reach target_alpha in 100 bisection steps")
    A = As + t * K
    B = rng.standard_normal((n, m))
    if np.linalg.matrix_rank(B) < m:
        raise UzawaError("random B is rank deficient; try another seed")
    if spec.d_rank:
        Ld = rng.standard_normal((spec.d_rank, m))
        D = Ld.T @ Ld
        D = 0.5 * (D + D.T)
    else:
        D = np.zeros((m, m))
    x_star = rng.standard_normal(n)
    y_star = rng.standard_normal(m)
    f = A @ x_star + B @ y_star
    g = B.T @ x_star - D @ y_star
    return SaddleSystem(
        CsrMatrix.from_dense(A), CsrMatrix.from_dense(B), CsrMatrix.from_dense(D), f, g,
        meta={"problem": "synthetic", "x_star": x_star, "y_star": y_star, "skew_scale": t,
              **spec.to_dict()},
    )


@dataclass
class PicardResult:
    velocity: np.ndarray
    pressure: np.ndarray
    spec: OseenSpec
    updates: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    inner_status: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    converged: bool = False

    @property
    def picard_iterations(self):
        return len(self.updates)


def picard_navier_stokes(spec, inner_cfg, outer_tol=1e-6, max_picard=50, keep_traces=False):
    """Picard iteration for steady Navier-Stokes.

    Each step assembles the Oseen system whose wind is the current velocity
    (zero at the first step, i.e. a Stokes solve), solves it warm-started
    with ``inner_cfg`` and stops once ``||u_new - u|| / ||u_new|| <= outer_tol``.
    """
    from .errors import BreakdownError
    from .solvers import solve

    base = replace(spec, wind="zero")
    sys0 = generate_oseen(base)
    x = np.zeros(sys0.n)
    y = np.zeros(sys0.m)
    result = PicardResult(x, y, spec)
    for k in range(1, max_picard + 1):
        wind = "zero" if k == 1 else DiscreteWind(x)
        sys = sys0 if k == 1 else generate_oseen(replace(spec, wind=wind), check=False)
        try:
            x_new, y_new, trace = solve(sys, inner_cfg, x, y)
        except BreakdownError as exc:
            raise BreakdownError(f"Picard iteration {k}: {exc}", iteration=k) from exc
        if trace.status == "breakdown":
            raise BreakdownError(f"Picard iteration {k}: inner solve diverged after {trace.iterations} steps",
                                 iteration=k)
        norm = np.linalg.norm(x_new)
        update = np.linalg.norm(x_new - x) / norm if norm > 0 else 0.0
        result.updates.append(float(update))
        result.inner_iterations.append(trace.iterations)
        result.inner_status.append(trace.status)
        if keep_traces:
            result.traces.append(trace)
        x, y = x_new, y_new
        if update <= outer_tol:
            result.converged = True
            break
    result.velocity, result.pressure = x, y
    return result


def _full_pressure(pressure, spec):
    N = spec.grid_n
    if spec.pressure_fix == "pin_first_dof":
        p = np.concatenate([[0.0], pressure])
    else:
        p = np.array(pressure, dtype=float)
    p = p - p.mean()
    return p.reshape(N, N)


def cell_centered_fields(velocity, pressure, spec):
    """``(u, v, p)`` interpolated to cell centres, each ``(N, N)`` with row ``j`` = ``y_{j+1/2}``."""
    N = spec.grid_n
    u, v = split_velocity(velocity, N)
    uc = 0.5 * (u[:, :-1] + u[:, 1:])
    vc = 0.5 * (v[:-1, :] + v[1:, :])
    return uc, vc, _full_pressure(pressure, spec)


def export_fields(velocity, pressure, spec, out_dir, prefix="field"):
    """Write cell-centred ``u``, ``v``, ``p`` and the centre coordinates as CSV grids.

    Row ``j`` of each grid holds the cells at height ``y_{j+1/2}`` (bottom row
    first), column ``i`` the cells at ``x_{i+1/2}``.
    """
    os.makedirs(out_dir, exist_ok=True)
    N = spec.grid_n
    uc, vc, p = cell_centered_fields(velocity, pressure, spec)
    centres = (np.arange(N) + 0.5) / N
    paths = {}
    for name, arr in (("u", uc), ("v", vc), ("p", p)):
        path = os.path.join(out_dir, f"{prefix}_{name}.csv")
        np.savetxt(path, arr, delimiter=",", fmt="%.17g")
        paths[name] = path
    path = os.path.join(out_dir, f"{prefix}_coords.csv")
    np.savetxt(path, np.column_stack([centres, centres]), delimiter=",", fmt="%.17g",
               header="x,y", comments="")
    paths["coords"] = path
    with open(os.path.join(out_dir, f"{prefix}_meta.json"), "w") as fh:
        json.dump({"grid_n": N, "layout": "rows = y ascending, cols = x ascending, cell centres",
                   "spec": spec.to_dict()}, fh, indent=2)
    return paths
