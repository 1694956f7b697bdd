import json
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from adaptive_uzawa.diagnostics import compute_kappa, _pencil_eigs
from adaptive_uzawa.errors import BreakdownError, ConfigError
from adaptive_uzawa.linalg import CsrMatrix
from adaptive_uzawa.operators import (
    ApplyOperator, PreconditionerSpec, build_exact_solver, build_scaled_identity, identity_operator,
    matrix_operator,
)
from adaptive_uzawa.problems import SyntheticSpec, generate_synthetic
from adaptive_uzawa.solvers import (
    IterationTrace, SolverConfig, TauStrategy, UzawaState, compute_tau, hu_zou_omega, prepare, solve,
    step_bpv, step_exact_uzawa, step_hu_zou, step_inexact_uzawa,
)
from adaptive_uzawa.system import SaddleSystem

from conftest import random_spd
from oracles import omega_by_search, tau_by_search

UZAWA = ("exact_uzawa_2_1", "inexact_uzawa_3_1", "bpv_1_2", "hu_zou_1_1")


def dense_op(M, name="M"):
    M = np.asarray(M, dtype=float)
    return ApplyOperator(M.shape[0], lambda x: M @ x, symmetric=True, definite=True, name=name)


def small_system(rng, n=8, m=3, skew=0.3, d_rank=0):
    As = random_spd(rng, n)
    K = rng.standard_normal((n, n))
    a = As + skew * (K - K.T)
    b = rng.standard_normal((n, m))
    if d_rank:
        L = rng.standard_normal((d_rank, m))
        d = L.T @ L
        d = 0.5 * (d + d.T)
    else:
        d = np.zeros((m, m))
    x, y = rng.standard_normal(n), rng.standard_normal(m)
    return SaddleSystem(CsrMatrix.from_dense(a), CsrMatrix.from_dense(b), CsrMatrix.from_dense(d),
                        a @ x + b @ y, b.T @ x - d @ y, meta={"x_star": x, "y_star": y})


class TestComputeTau:
    def test_zero_residual(self):
        assert compute_tau(np.zeros(3), identity_operator(3), dense_op(np.eye(3))) == 1.0

    def test_perfect_preconditioner(self, rng):
        H = random_spd(rng, 5)
        Sinv = dense_op(np.linalg.inv(H))
        for _ in range(5):
            assert math.isclose(compute_tau(rng.standard_normal(5), Sinv, dense_op(H)), 1.0, rel_tol=1e-12)

    def test_hand_example(self):
        assert compute_tau(np.array([1.0, 0.0]), identity_operator(2), dense_op(np.diag([2.0, 4.0]))) == 0.5

    def test_matches_search_oracle(self, rng):
        for _ in range(25):
            m = int(rng.integers(2, 11))
            S, H = random_spd(rng, m, 50.0), random_spd(rng, m, 50.0)
            g = rng.standard_normal(m)
            tau = compute_tau(g, dense_op(np.linalg.inv(S)), dense_op(H))
            assert math.isclose(tau, tau_by_search(g, S, H), rel_tol=1e-8)

    def test_nonpositive_denominator(self):
        with pytest.raises(BreakdownError, match="not positive"):
            compute_tau(np.array([1.0, 0.0]), identity_operator(2), dense_op(np.diag([-1.0, 1.0])))

    def test_tiny_residual_uses_formula(self):
        tau = compute_tau(np.array([1e-100, 0.0]), identity_operator(2), dense_op(np.diag([4.0, 1.0])))
        assert tau == 0.25

    def test_underflowing_denominator_is_breakdown(self):
        with pytest.raises(BreakdownError):
            compute_tau(np.array([1e-200, 0.0]), identity_operator(2), dense_op(np.diag([4.0, 1.0])))

    def test_single_preconditioner_application(self, rng):
        calls = []
        P = ApplyOperator(4, lambda x: (calls.append(1), x.copy())[1], symmetric=True, definite=True)
        compute_tau(rng.standard_normal(4), P, dense_op(random_spd(rng, 4)))
        assert len(calls) == 1

    @given(st.integers(0, 2**32 - 1), st.sampled_from([1e-3, 0.01, 7.0, 100.0, 1e3]))
    def test_scale_invariance(self, seed, c):
        r = np.random.default_rng(seed)
        m = int(r.integers(2, 9))
        S, H = random_spd(r, m), random_spd(r, m)
        g = r.standard_normal(m)
        Sinv = np.linalg.inv(S)
        tau1 = compute_tau(g, dense_op(Sinv), dense_op(H))
        tauc = compute_tau(g, dense_op(Sinv / c), dense_op(H))
        assert math.isclose(tauc, c * tau1, rel_tol=1e-12)
        u1 = tau1 * (Sinv @ g)
        uc = tauc * ((Sinv / c) @ g)
        assert np.linalg.norm(uc - u1) <= 1e-12 * np.linalg.norm(u1)

    @given(st.integers(0, 2**32 - 1))
    def test_rayleigh_bounds(self, seed):
        r = np.random.default_rng(seed)
        m = int(r.integers(2, 9))
        Sinv, H = dense_op(np.linalg.inv(random_spd(r, m))), dense_op(random_spd(r, m))
        lam = _pencil_eigs(Sinv, H, m)
        tau = compute_tau(r.standard_normal(m), Sinv, H)
        assert 1 / lam[-1] * (1 - 1e-9) <= tau <= 1 / lam[0] * (1 + 1e-9)


class TestConfig:
    def test_defaults(self):
        cfg = SolverConfig()
        assert cfg.omega == 0.3 and cfg.delta == 0.3 and cfg.tol == 1e-6
        assert cfg.tau_strategy.kind == "adaptive_M"
        assert SolverConfig("exact_uzawa_2_1").tau_strategy.kind == "adaptive_H"
        assert SolverConfig("bpv_1_2").tau_strategy == TauStrategy.fixed(0.01)

    @pytest.mark.parametrize("kwargs", [
        {"algorithm": "nope"}, {"omega": 0}, {"delta": -1}, {"tol": 0}, {"theta": 0}, {"max_iter": -1},
        {"algorithm": "bpv_1_2", "tau_strategy": "adaptive_M"},
        {"algorithm": "inexact_uzawa_3_1", "tau_strategy": "adaptive_Ss"},
        {"tau_strategy": {"kind": "fixed", "tau": 0}},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            SolverConfig.from_dict(kwargs)

    def test_round_trip(self):
        cfg = SolverConfig("bpv_1_2", delta=0.1, tau_strategy=TauStrategy.fixed(0.01),
                           a_precond=PreconditionerSpec("jacobi"), max_iter=7)
        assert SolverConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="unknown"):
            SolverConfig.from_dict({"omgea": 0.3})


class TestSteps:
    def test_exact_step_hand_example(self):
        # A = 2I, B = e1, D = 0, S_hat = I, theta = 0.5, zero start
        A = CsrMatrix.diag([2.0, 2.0])
        B = CsrMatrix.from_dense([[1.0], [0.0]])
        f, g = np.array([2.0, 4.0]), np.array([3.0])
        sys = SaddleSystem(A, B, CsrMatrix.zeros(1, 1), f, g)
        cfg = SolverConfig("exact_uzawa_2_1", theta=0.5)
        ws = prepare(sys, cfg)
        st_ = step_exact_uzawa(sys, UzawaState(np.zeros(2), np.zeros(1)), cfg, ws)
        # x1 = A^-1 f = (1, 2); g1 = x1[0] - 3 = -2; H = B^T A_s^-1 B = 1/2; tau = 2
        assert np.allclose(st_.x, [1.0, 2.0])
        assert math.isclose(st_.tau, 2.0)
        assert np.allclose(st_.y, [0.5 * 2.0 * -2.0])

    def test_decoupled_system(self, rng):
        a = random_spd(rng, 4) + 0.2 * np.triu(np.ones((4, 4)), 1)
        sys = SaddleSystem(CsrMatrix.from_dense(a), CsrMatrix.zeros(4, 2), CsrMatrix.zeros(2, 2),
                           rng.standard_normal(4), np.zeros(2))
        x, y, trace = solve(sys, SolverConfig("exact_uzawa_2_1", theta=0.5, max_iter=5))
        assert np.allclose(x, np.linalg.solve(a, sys.f), rtol=1e-12)
        assert np.array_equal(y, np.zeros(2))
        assert trace.iterations == 1

    def test_inexact_with_exact_a0_and_unit_omega_matches_exact(self, rng):
        sys = small_system(rng, skew=0.0)
        state = UzawaState(rng.standard_normal(sys.n), rng.standard_normal(sys.m))
        c_in = SolverConfig("inexact_uzawa_3_1", omega=1.0, a_precond=PreconditionerSpec("exact_factor"))
        c_ex = SolverConfig("exact_uzawa_2_1", theta=0.3)
        a = step_inexact_uzawa(sys, UzawaState(state.x, state.y), c_in, prepare(sys, c_in))
        b = step_exact_uzawa(sys, UzawaState(state.x, state.y), c_ex, prepare(sys, c_ex))
        assert np.allclose(a.x, b.x, rtol=1e-12, atol=1e-12)

    def test_bpv_zero_parameters_leave_state(self, rng):
        sys = small_system(rng)
        ws = prepare(sys, SolverConfig("bpv_1_2"))
        cfg = SimpleNamespace(delta=0.0, tau_strategy=SimpleNamespace(kind="fixed", tau=0.0))
        x, y = rng.standard_normal(sys.n), rng.standard_normal(sys.m)
        out = step_bpv(sys, UzawaState(x, y), cfg, ws)
        assert np.array_equal(out.x, x) and np.array_equal(out.y, y)

    def test_bpv_flags_d_extension(self, rng):
        sys = small_system(rng, d_rank=2)
        _, _, trace = solve(sys, SolverConfig("bpv_1_2", max_iter=2))
        assert trace.metadata.get("bpv_d_extension") is True

    def test_hu_zou_omega_examples(self, rng):
        A = CsrMatrix.from_dense(random_spd(rng, 5))
        assert hu_zou_omega(A, np.zeros(5), np.ones(5)) == 1.0
        f = rng.standard_normal(5)
        r = np.linalg.solve(A.to_dense(), f)
        assert math.isclose(hu_zou_omega(A, f, r), 1.0, rel_tol=1e-12)

    def test_hu_zou_omega_matches_search(self, rng):
        for _ in range(10):
            a = random_spd(rng, 6, 20.0)
            P = random_spd(rng, 6, 5.0)
            f = rng.standard_normal(6)
            r = np.linalg.solve(P, f)
            w = hu_zou_omega(CsrMatrix.from_dense(a), f, r)
            assert math.isclose(w, omega_by_search(a, f, r), rel_tol=1e-8)

    def test_hu_zou_breakdown(self):
        A = CsrMatrix.from_dense([[0.0, 1.0], [-1.0, 0.0]])
        with pytest.raises(BreakdownError):
            hu_zou_omega(A, np.array([1.0, 0.0]), np.array([1.0, 0.0]))

    def test_hu_zou_records_omega(self, rng):
        sys = small_system(rng)
        _, _, trace = solve(sys, SolverConfig("hu_zou_1_1", a_precond=PreconditionerSpec("jacobi"), max_iter=3))
        assert all(r.omega is not None for r in trace.records[1:])


class TestSolve:
    @pytest.mark.parametrize("alg", UZAWA + ("gmres",))
    @pytest.mark.parametrize("d_rank", [0, 2])
    def test_planted_solution_is_fixed_point(self, alg, d_rank):
        sys = generate_synthetic(SyntheticSpec(n=12, m=4, d_rank=d_rank, seed=3))
        x0, y0 = sys.meta["x_star"], sys.meta["y_star"]
        cfg = SolverConfig(alg, theta=0.5 if alg == "exact_uzawa_2_1" else None, tol=1e-300, max_iter=1)
        x, y, trace = solve(sys, cfg, x0, y0)
        assert np.linalg.norm(x - x0) <= 1e-11 * np.linalg.norm(x0)
        assert np.linalg.norm(y - y0) <= 1e-11 * np.linalg.norm(y0)
        assert trace.final_residual <= 1e-11

    def test_converged_at_start(self):
        sys = generate_synthetic(SyntheticSpec(n=10, m=3, seed=1))
        _, _, trace = solve(sys, SolverConfig(), sys.meta["x_star"], sys.meta["y_star"])
        assert trace.status == "converged" and trace.iterations == 0

    def test_max_iter_zero(self, rng):
        sys = small_system(rng)
        x, y, trace = solve(sys, SolverConfig(max_iter=0))
        assert trace.status == "max_iter" and len(trace.records) == 1
        assert not np.any(x) and not np.any(y)

    def test_exact_uzawa_converges_monotone_tail(self):
        sys = generate_synthetic(SyntheticSpec(n=20, m=6, target_alpha=1.2, seed=5))
        x, y, trace = solve(sys, SolverConfig("exact_uzawa_2_1", max_iter=5000, tol=1e-10))
        assert trace.status == "converged"
        assert np.all(np.diff(trace.relative_residuals[-10:]) < 0)
        assert np.allclose(y, sys.meta["y_star"], rtol=1e-7)

    @pytest.mark.parametrize("alg", UZAWA)
    def test_algorithms_converge_on_mild_problem(self, alg):
        sys = generate_synthetic(SyntheticSpec(n=20, m=5, target_alpha=1.1, seed=11, spectrum=(1.0, 3.0)))
        cfg = SolverConfig(alg, a_precond=PreconditionerSpec("exact_factor"), max_iter=20000,
                           tau_strategy=TauStrategy.fixed(0.05) if alg == "bpv_1_2" else None)
        x, y, trace = solve(sys, cfg)
        assert trace.status == "converged", (alg, trace.final_residual)
        assert np.allclose(x, sys.meta["x_star"], rtol=1e-4, atol=1e-5)

    def test_adaptive_ss_strategy(self):
        sys = generate_synthetic(SyntheticSpec(n=15, m=4, target_alpha=1.3, seed=2))
        _, _, trace = solve(sys, SolverConfig("exact_uzawa_2_1", tau_strategy="adaptive_Ss", theta=0.5,
                                              max_iter=5000))
        assert trace.status == "converged"

    def test_default_theta_recorded(self):
        sys = generate_synthetic(SyntheticSpec(n=15, m=4, seed=2))
        _, _, trace = solve(sys, SolverConfig("exact_uzawa_2_1", max_iter=1))
        assert trace.metadata["theta_source"] == "0.5 * theta_max"
        assert 0 < trace.metadata["theta"] < 1

    def test_divergence_reported_as_breakdown(self, rng):
        sys = small_system(rng, skew=3.0)
        cfg = SolverConfig("bpv_1_2", delta=1.9, tau_strategy=TauStrategy.fixed(50.0),
                           a_precond=PreconditionerSpec("exact_factor"), max_iter=2000)
        _, _, trace = solve(sys, cfg)
        assert trace.status == "breakdown"

    def test_step_error_carries_iteration(self):
        A = CsrMatrix.from_dense([[1.0, 0.0], [0.0, 1.0]])
        B = CsrMatrix.from_dense([[1.0], [0.0]])
        sys = SaddleSystem(A, B, CsrMatrix.zeros(1, 1), np.array([1.0, 0.0]), np.array([0.0]))
        bad = ApplyOperator(1, lambda x: x.copy(), symmetric=True, name="bad")
        neg = ApplyOperator(1, lambda v: -v, symmetric=True, name="neg")
        cfg = SolverConfig("inexact_uzawa_3_1", a_precond=PreconditionerSpec("exact_factor"))
        ws = prepare(sys, cfg, schur_inv=bad)
        ws.tau_op = neg
        with pytest.raises(BreakdownError) as info:
            solve(sys, cfg, workspace=ws)
        assert info.value.iteration == 1
        assert info.value.trace.status == "breakdown"

    def test_trace_invariants_and_serialization(self, tmp_path, rng):
        sys = small_system(rng)
        cfg = SolverConfig(max_iter=40, a_precond=PreconditionerSpec("exact_factor"))
        _, _, trace = solve(sys, cfg)
        assert len(trace.records) <= cfg.max_iter + 1
        for r in trace.records:
            assert math.isclose(r.res_combined, math.hypot(r.res_x, r.res_y))
        if trace.status == "converged":
            assert trace.final_residual <= cfg.tol
        else:
            assert trace.final_residual > cfg.tol
        trace.to_jsonl(tmp_path / "t.jsonl")
        back = IterationTrace.from_jsonl(tmp_path / "t.jsonl")
        assert [r.res_combined for r in back.records] == [r.res_combined for r in trace.records]
        trace.to_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "iter,res_x,res_y,res_combined,tau,omega,wall_ns"
        assert len(lines) == len(trace.records) + 1

    def test_traces_reproducible(self, rng):
        sys = small_system(rng)
        cfg = SolverConfig(max_iter=30)
        t1 = solve(sys, cfg)[2]
        t2 = solve(sys, cfg)[2]
        assert [r.res_combined for r in t1.records] == [r.res_combined for r in t2.records]

    def test_schur_scale_leaves_iterates_unchanged(self, rng):
        sys = small_system(rng)
        outs = []
        for c in (1.0, 100.0):
            cfg = SolverConfig(max_iter=15, schur_precond=PreconditionerSpec("scaled_identity", scale=c))
            outs.append(solve(sys, cfg))
        assert np.allclose(outs[0][1], outs[1][1], rtol=1e-12, atol=1e-14)
        assert np.allclose([t * 100 for t in outs[0][2].taus], outs[1][2].taus, rtol=1e-12)

    def test_non_identity_schur_preconditioner_rejected(self, rng):
        sys = small_system(rng)
        with pytest.raises(ConfigError):
            solve(sys, SolverConfig(schur_precond=PreconditionerSpec("jacobi")))
