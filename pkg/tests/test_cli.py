import csv
import filecmp
import json
import os

import numpy as np
import pytest

from adaptive_uzawa.cli import PRESETS, ExperimentConfig, cmd_diagnose, cmd_solve, main
from adaptive_uzawa.errors import ConfigError
from adaptive_uzawa.fileio import load_system, read_matrix_market
from adaptive_uzawa.problems import SyntheticSpec, generate_synthetic


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


def synthetic_problem(**kw):
    return {"type": "synthetic", "n": 10, "m": 4, "seed": 7, **kw}


def read_trace(path, drop=("wall_ns",)):
    with open(path, newline="") as fh:
        return [{k: v for k, v in row.items() if k not in drop} for row in csv.DictReader(fh)]


class TestGenerate:
    def test_synthetic_five_files_round_trip(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"problem": synthetic_problem()})
        assert main(["generate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        out = tmp_path / "o" / "system"
        assert sorted(os.listdir(out)) == ["A.mtx", "B.mtx", "D.mtx", "f.bin", "g.bin"]
        sys = load_system(str(out))
        ref = generate_synthetic(SyntheticSpec(n=10, m=4, seed=7))
        for name in ("A", "B", "D"):
            assert getattr(sys, name).to_dense().tobytes() == getattr(ref, name).to_dense().tobytes()
        assert sys.f.tobytes() == ref.f.tobytes() and sys.g.tobytes() == ref.g.tobytes()

    def test_repeat_is_identical(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"problem": synthetic_problem()})
        for d in ("a", "b"):
            assert main(["generate", "--config", cfg, "--out", str(tmp_path / d)]) == 0
        names = os.listdir(tmp_path / "a" / "system")
        match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / "system", tmp_path / "b" / "system",
                                                   names, shallow=False)
        assert sorted(match) == sorted(names) and not mismatch and not errors

    def test_seed_flag(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"problem": synthetic_problem()})
        main(["generate", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "8"])
        ref = generate_synthetic(SyntheticSpec(n=10, m=4, seed=8))
        assert np.array_equal(load_system(str(tmp_path / "a" / "system")).f, ref.f)

    def test_oseen_grid8_counts(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"problem": {"type": "oseen", "grid_n": 8}})
        assert main(["generate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        out = tmp_path / "o" / "n=8"
        A = read_matrix_market(str(out / "A.mtx"))
        B = read_matrix_market(str(out / "B.mtx"))
        edges = 8 * 7  # interior edges per direction
        assert A.shape == (2 * edges, 2 * edges)
        assert B.shape == (2 * edges, 8 * 8 - 1)

    def test_input_not_mutated(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"problem": synthetic_problem(), "runs": [
            {"label": "exact", "solver": {"algorithm": "exact_uzawa_2_1", "theta": 0.5}}]})
        before = (tmp_path / "c.json").read_bytes()
        main(["solve", "--config", cfg, "--out", str(tmp_path / "o"), "--seed", "3"])
        assert (tmp_path / "c.json").read_bytes() == before


class TestSolve:
    def test_no_runs(self, tmp_path):
        cfg = ExperimentConfig.from_dict({"problem": synthetic_problem(), "output_dir": str(tmp_path)})
        with pytest.raises(ConfigError, match="no runs configured"):
            cmd_solve(cfg, out=lambda s: None)
        path = write_config(tmp_path / "c.json", {"problem": synthetic_problem()})
        assert main(["solve", "--config", path]) == 1

    def test_summary_matches_traces(self, tmp_path):
        runs = [
            {"label": "adaptive", "solver": {"algorithm": "inexact_uzawa_3_1", "a_precond": {"kind": "jacobi"}}},
            {"label": "exact uzawa", "solver": {"algorithm": "exact_uzawa_2_1", "theta": 0.5}},
            {"label": "gmres", "solver": {"algorithm": "gmres", "restart": 10}},
        ]
        cfg = write_config(tmp_path / "c.json", {"problem": synthetic_problem(n=20, m=6), "runs": runs,
                                                 "formats": ["csv", "jsonl"]})
        out = tmp_path / "o"
        assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert [r["label"] for r in summary] == ["adaptive", "exact uzawa", "gmres"]
        for row in summary:
            stem = row["label"].replace(" ", "_")
            records = read_trace(out / f"{stem}.csv")
            with open(out / f"{stem}.jsonl") as fh:
                assert sum(1 for _ in fh) == len(records)
            # record 0 is the initial state
            assert row["iters"] == len(records) - 1
            assert row["status"] == "converged"
        with open(out / "summary.csv") as fh:
            assert next(csv.reader(fh))[:4] == ["label", "iters", "final residual", "wall seconds"]

    def test_breakdown_exit_code_and_other_runs_proceed(self, tmp_path):
        runs = [
            {"label": "bad", "solver": {"algorithm": "exact_uzawa_2_1", "theta": 50.0}},
            {"label": "good", "solver": {"algorithm": "exact_uzawa_2_1", "theta": 0.5}},
        ]
        cfg = write_config(tmp_path / "c.json", {"problem": synthetic_problem(), "runs": runs})
        assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert [r["status"] for r in summary] == ["breakdown", "converged"]

    def test_config_errors(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["solve", "--config", str(bad)]) == 1
        dup = write_config(tmp_path / "dup.json", {"problem": synthetic_problem(), "runs": [
            {"label": "a"}, {"label": "a"}]})
        assert main(["solve", "--config", dup]) == 1
        assert main(["solve", "--preset", "nope"]) == 1
        assert main(["solve", "--preset", "table3", "--seed", "1"]) == 1

    def test_missing_config_is_io_error(self, tmp_path):
        assert main(["solve", "--config", str(tmp_path / "missing.json")]) == 3

    def test_files_problem(self, tmp_path):
        cfg = write_config(tmp_path / "g.json", {"problem": synthetic_problem()})
        main(["generate", "--config", cfg, "--out", str(tmp_path / "g")])
        cfg = write_config(tmp_path / "s.json", {
            "problem": {"type": "files", "dir": str(tmp_path / "g" / "system")},
            "runs": [{"label": "x", "solver": {"algorithm": "exact_uzawa_2_1", "theta": 0.5}}]})
        assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 0

    def test_table_presets_row_order(self):
        labels = [r["label"] for r in PRESETS["table3"]["runs"]]
        assert labels == ["AdaptiveUzawa+Ilu(1e-4)", "AdaptiveUzawa+Cholinc(1e-4)", "AdaptiveUzawa+Jacobi",
                          "AdaptiveUzawa+Exact", "BPV+Ilu(1e-4)", "BPV+Cholinc(1e-4)", "BPV+Jacobi", "Gmres"]
        for name in PRESETS:
            ExperimentConfig.from_dict(PRESETS[name])

    @pytest.mark.slow
    def test_figure1_preset_reproducible(self, tmp_path):
        for d in ("a", "b"):
            assert main(["solve", "--preset", "figure1", "--out", str(tmp_path / d), "--format", "csv"]) == 0
        traces = sorted(f for f in os.listdir(tmp_path / "a") if f.endswith("_n=32.csv"))
        assert len(traces) == 4
        for name in traces:
            # wall-clock timings are the only non-deterministic column
            assert read_trace(tmp_path / "a" / name) == read_trace(tmp_path / "b" / name)


class TestDiagnose:
    def test_stokes_alpha_one(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"problem": {"type": "oseen", "grid_n": 6, "wind": "zero"}})
        assert main(["diagnose", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        report = json.loads((tmp_path / "o" / "report.json").read_text())
        assert report["alpha"] == pytest.approx(1.0, rel=1e-10)
        assert any("window" in v for v in report["verdicts"])

    def test_target_alpha_and_betas(self, tmp_path):
        cfg = ExperimentConfig.from_dict({"problem": synthetic_problem(n=20, m=6, target_alpha=2.0, d_rank=2),
                                          "output_dir": str(tmp_path)})
        report = cmd_diagnose(cfg, out=lambda s: None)["system"]
        assert 1.8 <= report["alpha"] <= 2.2
        for k in (1, 2, 3):
            kappa = report[f"kappa{k}"]
            assert report[f"beta{k}"] == (kappa - 1.0) / (kappa + 1.0)

    def test_dense_cap_gives_nulls(self, tmp_path):
        cfg = ExperimentConfig.from_dict({"problem": synthetic_problem(n=20, m=6), "output_dir": str(tmp_path)})
        report = cmd_diagnose(cfg, out=lambda s: None, cap=10)["system"]
        assert report["alpha"] is None and report["kappa1"] is None
        assert any("dense cap" in n for n in report["notes"])

    def test_rejects_non_identity_schur(self, tmp_path):
        cfg = ExperimentConfig.from_dict({"problem": synthetic_problem(), "output_dir": str(tmp_path),
                                          "diagnose": {"schur_precond": {"kind": "jacobi"}}})
        with pytest.raises(ConfigError):
            cmd_diagnose(cfg, out=lambda s: None)


class TestNs:
    def test_outer_tol_one(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {
            "problem": {"type": "oseen", "grid_n": 8, "nu": 0.1},
            "runs": [{"label": "exact", "solver": {"algorithm": "exact_uzawa_2_1", "theta": 1.0, "tol": 1e-8}}],
            "ns": {"outer_tol": 1.0}})
        out = tmp_path / "o"
        assert main(["ns", "--config", cfg, "--out", str(out)]) == 0
        summary = json.loads((out / "picard_summary.json").read_text())
        assert summary[0]["picard iters"] == 1 and summary[0]["converged"] is True
        u = np.loadtxt(out / "exact_n=8_u.csv", delimiter=",")
        assert u.shape == (8, 8)

    def test_breakdown_exit_code(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {
            "problem": {"type": "oseen", "grid_n": 8},
            "runs": [{"label": "bad", "solver": {"algorithm": "exact_uzawa_2_1", "theta": 50.0}}]})
        assert main(["ns", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        summary = json.loads((tmp_path / "o" / "picard_summary.json").read_text())
        assert "Picard iteration 1" in summary[0]["error"]

    def test_needs_oseen(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"problem": synthetic_problem(), "runs": [{"label": "a"}]})
        assert main(["ns", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
