"""
Command-line harness.

Subcommands ``generate``, ``solve``, ``diagnose`` and ``ns`` read one JSON
experiment config (``--config``) or a named preset (``--preset``).

Exit codes: 0 success, 1 config error, 2 solver breakdown, 3 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import re
import sys as _sys
import time
from dataclasses import dataclass, field

from .errors import BreakdownError, ConfigError, DenseCapError, UzawaError
from .fileio import load_system, save_system
from .linalg import DEFAULT_DENSE_CAP
from .operators import PreconditionerSpec, build_preconditioner, build_scaled_identity
from .problems import OseenSpec, SyntheticSpec, export_fields, generate_oseen, generate_synthetic, picard_navier_stokes
from .solvers import SolverConfig, solve

__all__ = ["ExperimentConfig", "PRESETS", "main", "cmd_diagnose", "cmd_generate", "cmd_ns", "cmd_solve"]

EXIT_OK, EXIT_CONFIG, EXIT_BREAKDOWN, EXIT_IO = 0, 1, 2, 3
FORMATS = ("jsonl", "csv")

log = logging.getLogger(__name__)


def _adaptive(a_precond, **extra):
    return {"algorithm": "inexact_uzawa_3_1", "omega": 0.3, "delta": 0.3, "a_precond": a_precond, **extra}


def _bpv(a_precond, **extra):
    return {"algorithm": "bpv_1_2", "delta": 0.1, "tau_strategy": {"kind": "fixed", "tau": 0.01},
            "a_precond": a_precond, **extra}


def _table_runs(max_iter):
    ilu = {"kind": "ilu_droptol", "droptol": 1e-4}
    ic = {"kind": "ic_droptol", "droptol": 1e-4}
    jac = {"kind": "jacobi"}
    exact = {"kind": "exact_factor"}
    return [
        {"label": "AdaptiveUzawa+Ilu(1e-4)", "solver": _adaptive(ilu, max_iter=max_iter)},
        {"label": "AdaptiveUzawa+Cholinc(1e-4)", "solver": _adaptive(ic, max_iter=max_iter)},
        {"label": "AdaptiveUzawa+Jacobi", "solver": _adaptive(jac, max_iter=max_iter)},
        {"label": "AdaptiveUzawa+Exact", "solver": _adaptive(exact, max_iter=max_iter)},
        {"label": "BPV+Ilu(1e-4)", "solver": _bpv(ilu, max_iter=max_iter)},
        {"label": "BPV+Cholinc(1e-4)", "solver": _bpv(ic, max_iter=max_iter)},
        {"label": "BPV+Jacobi", "solver": _bpv(jac, max_iter=max_iter)},
        {"label": "Gmres", "solver": {"algorithm": "gmres", "max_iter": max_iter, "restart": 50}},
    ]


def _oseen(nu, grid_n=32):
    # the constants are projected out of the pressure space; see README
    return {"type": "oseen", "grid_n": grid_n, "nu": nu, "wind": "cavity_wind",
            "pressure_fix": "project_constants"}


PRESETS = {
    "figure1": {
        "problem": _oseen(1.0),
        "runs": [
            {"label": "Jacobi", "solver": _adaptive({"kind": "jacobi"}, max_iter=6000)},
            {"label": "Ilu(1e-1)", "solver": _adaptive({"kind": "ilu_droptol", "droptol": 0.1}, max_iter=6000)},
            {"label": "Cholinc(1e-1)", "solver": _adaptive({"kind": "ic_droptol", "droptol": 0.1}, max_iter=6000)},
            {"label": "Exact", "solver": _adaptive({"kind": "exact_factor"}, max_iter=6000)},
        ],
        "formats": ["csv", "jsonl"],
    },
    "table1": {"problem": _oseen(0.01), "grids": [16, 32], "runs": _table_runs(3000),
               "ns": {"outer_tol": 1e-6, "max_picard": 50}},
    "table2": {"problem": _oseen(0.1), "grids": [16, 32], "runs": _table_runs(3000),
               "ns": {"outer_tol": 1e-6, "max_picard": 50}},
    "table3": {"problem": _oseen(1.0), "grids": [16, 32], "runs": _table_runs(3000),
               "ns": {"outer_tol": 1e-6, "max_picard": 50}},
    "figure2": {
        "problem": _oseen(0.01),
        "runs": [{"label": "AdaptiveUzawa+Cholinc(1e-1)",
                  "solver": _adaptive({"kind": "ic_droptol", "droptol": 0.1}, max_iter=6000)}],
        "ns": {"outer_tol": 1e-6, "max_picard": 50, "export": True},
    },
}


@dataclass
class Run:
    label: str
    solver: SolverConfig


@dataclass
class ExperimentConfig:
    problem: dict
    runs: list
    output_dir: str = "out"
    formats: tuple = ("jsonl",)
    grids: tuple = ()
    ns: dict = field(default_factory=dict)
    diagnose: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = copy.deepcopy(d)
        unknown = set(d) - {"problem", "runs", "output_dir", "formats", "grids", "ns", "diagnose"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "problem" not in d:
            raise ConfigError("config needs a 'problem'")
        problem = d["problem"]
        ptype = problem.get("type")
        if ptype not in ("oseen", "synthetic", "files"):
            raise ConfigError(f"unknown problem type {ptype!r}")
        runs = []
        for i, r in enumerate(d.get("runs", [])):
            if "label" not in r:
                raise ConfigError(f"run {i} has no label")
            runs.append(Run(str(r["label"]), SolverConfig.from_dict(r.get("solver", {}))))
        labels = [r.label for r in runs]
        if len(set(labels)) != len(labels):
            raise ConfigError("run labels must be unique")
        formats = tuple(d.get("formats", ["jsonl"]))
        if not formats or set(formats) - set(FORMATS):
            raise ConfigError(f"formats must be a nonempty subset of {FORMATS}")
        cfg = cls(problem, runs, d.get("output_dir", "out"), formats, tuple(d.get("grids", ())),
                  d.get("ns", {}), d.get("diagnose", {}))
        cfg.build_problems()  # validates the problem spec
        return cfg

    def problem_specs(self):
        """``[(tag, spec)]``: one entry per grid for Oseen problems."""
        p = dict(self.problem)
        ptype = p.pop("type")
        if ptype == "oseen":
            grids = self.grids or (p.get("grid_n", OseenSpec.grid_n),)
            return [(f"n={n}", OseenSpec.from_dict({**p, "grid_n": n})) for n in grids]
        if ptype == "synthetic":
            return [("", SyntheticSpec.from_dict(p))]
        return [("", p)]

    def build_problems(self):
        return self.problem_specs()


def _make_system(spec):
    if isinstance(spec, OseenSpec):
        return generate_oseen(spec)
    if isinstance(spec, SyntheticSpec):
        return generate_synthetic(spec)
    if "dir" in spec:
        return load_system(spec["dir"])
    try:
        return load_system({k: spec[k] for k in ("A", "B", "D", "f", "g")})
    except KeyError as exc:
        raise ConfigError(f"file problem needs 'dir' or all of A, B, D, f, g (missing {exc})") from None


def _slug(text):
    return re.sub(r"[^A-Za-z0-9.+=-]+", "_", text).strip("_")


def _full_label(label, tag):
    return f"{label} [{tag}]" if tag else label


def _write_trace(trace, out_dir, stem, formats):
    paths = []
    for fmt in formats:
        path = os.path.join(out_dir, f"{stem}.{fmt}")
        (trace.to_jsonl if fmt == "jsonl" else trace.to_csv)(path)
        paths.append(path)
    return paths


def format_table(rows, columns):
    """Fixed-width text table."""
    cells = [[str(r.get(c, "")) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def _write_summary(rows, columns, out_dir, name="summary"):
    with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    with open(os.path.join(out_dir, f"{name}.json"), "w") as fh:
        json.dump(rows, fh, indent=2)


def cmd_generate(cfg, out=print):
    """Write each configured system as Matrix Market matrices plus binary vectors."""
    written = []
    for tag, spec in cfg.problem_specs():
        sys = _make_system(spec)
        out_dir = os.path.join(cfg.output_dir, _slug(tag) or "system")
        paths = save_system(sys, out_dir)
        out(f"wrote {sys.n}+{sys.m} system to {out_dir}")
        written.append(paths)
    return written


SOLVE_COLUMNS = ["label", "iters", "final residual", "wall seconds", "status"]


def cmd_solve(cfg, out=print):
    """Run every configured solver on every configured problem; returns (rows, any_breakdown)."""
    if not cfg.runs:
        raise ConfigError("no runs configured")
    os.makedirs(cfg.output_dir, exist_ok=True)
    rows = []
    broke = False
    for tag, spec in cfg.problem_specs():
        sys = _make_system(spec)
        for run in cfg.runs:
            label = _full_label(run.label, tag)
            row = {"label": label}
            log.info("solving %s", label)
            try:
                _, _, trace = solve(sys, run.solver)
            except BreakdownError as exc:
                trace = getattr(exc, "trace", None)
                row["error"] = str(exc)
                broke = True
            except UzawaError as exc:
                row.update({"status": "error", "error": str(exc)})
                rows.append(row)
                broke = True
                continue
            if trace is not None:
                _write_trace(trace, cfg.output_dir, _slug(label), cfg.formats)
                row.update({
                    "iters": trace.iterations,
                    "final residual": f"{trace.final_residual:.3e}",
                    "wall seconds": f"{trace.wall_seconds:.3f}",
                    "status": trace.status,
                })
                broke |= trace.status == "breakdown"
            rows.append(row)
    _write_summary(rows, SOLVE_COLUMNS + ["error"], cfg.output_dir)
    out(format_table(rows, SOLVE_COLUMNS))
    return rows, broke


def cmd_diagnose(cfg, out=print, cap=DEFAULT_DENSE_CAP):
    """Spectral report per problem as JSON; fields are null above the dense cap."""
    from .diagnostics import SpectralReport, spectral_report

    opts = dict(cfg.diagnose)
    base = cfg.runs[0].solver if cfg.runs else SolverConfig()
    omega = float(opts.get("omega", base.omega))
    delta = float(opts.get("delta", base.delta))
    a_spec = PreconditionerSpec.from_dict(opts["a_precond"]) if "a_precond" in opts else base.a_precond
    s_spec = PreconditionerSpec.from_dict(opts["schur_precond"]) if "schur_precond" in opts else base.schur_precond
    if s_spec.kind != "scaled_identity":
        raise ConfigError("the Schur preconditioner must be a scaled identity")
    reports = {}
    for tag, spec in cfg.problem_specs():
        sys = _make_system(spec)
        if max(sys.n, sys.m) > cap:
            rep = SpectralReport(omega=omega, delta=delta, delta_max=None)
            rep.notes.append(f"system size {sys.n}+{sys.m} exceeds the dense cap {cap}; constants not computed")
        else:
            schur_inv = build_scaled_identity(sys.m, s_spec.scale)
            try:
                rep = spectral_report(sys, schur_inv, build_preconditioner(a_spec, sys.As), omega, delta, cap)
            except DenseCapError as exc:
                rep = SpectralReport(omega=omega, delta=delta, delta_max=None)
                rep.notes.append(str(exc))
        reports[tag or "system"] = rep.to_dict()
    os.makedirs(cfg.output_dir, exist_ok=True)
    text = json.dumps(reports if len(reports) > 1 else next(iter(reports.values())), indent=2)
    with open(os.path.join(cfg.output_dir, "report.json"), "w") as fh:
        fh.write(text + "\n")
    out(text)
    return reports


NS_COLUMNS = ["label", "picard iters", "inner iters", "converged", "wall seconds"]


def cmd_ns(cfg, out=print):
    """Picard iteration for each (grid, run); writes fields and a Picard summary."""
    if not cfg.runs:
        raise ConfigError("no runs configured")
    opts = dict(cfg.ns)
    outer_tol = float(opts.get("outer_tol", 1e-6))
    max_picard = int(opts.get("max_picard", 50))
    export = bool(opts.get("export", True))
    os.makedirs(cfg.output_dir, exist_ok=True)
    rows = []
    broke = False
    for tag, spec in cfg.problem_specs():
        if not isinstance(spec, OseenSpec):
            raise ConfigError("ns needs an Oseen problem")
        for run in cfg.runs:
            label = _full_label(run.label, tag)
            t0 = time.perf_counter()
            row = {"label": label}
            try:
                res = picard_navier_stokes(spec, run.solver, outer_tol, max_picard)
            except BreakdownError as exc:
                row.update({"converged": "breakdown", "error": str(exc),
                            "wall seconds": f"{time.perf_counter() - t0:.3f}"})
                rows.append(row)
                broke = True
                continue
            row.update({
                "picard iters": res.picard_iterations,
                "inner iters": " ".join(map(str, res.inner_iterations)),
                "converged": res.converged,
                "wall seconds": f"{time.perf_counter() - t0:.3f}",
            })
            broke |= "breakdown" in res.inner_status
            if export:
                export_fields(res.velocity, res.pressure, spec, cfg.output_dir, prefix=_slug(label))
            rows.append(row)
    _write_summary(rows, NS_COLUMNS + ["error"], cfg.output_dir, "picard_summary")
    out(format_table(rows, NS_COLUMNS))
    return rows, broke


def load_config(args):
    if args.config and args.preset:
        raise ConfigError("give --config or --preset, not both")
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        d = copy.deepcopy(PRESETS[args.preset])
    elif args.config:
        try:
            with open(args.config) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
    else:
        raise ConfigError("one of --config or --preset is required")
    if args.out:
        d["output_dir"] = args.out
    if args.format:
        d["formats"] = [args.format]
    if args.seed is not None:
        if d.get("problem", {}).get("type") != "synthetic":
            raise ConfigError("--seed applies to synthetic problems only")
        d["problem"]["seed"] = args.seed
    return ExperimentConfig.from_dict(d)


def build_parser():
    parser = argparse.ArgumentParser(prog="adaptive-uzawa", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("generate", "write the configured system(s) as Matrix Market + vector files"),
        ("solve", "run the configured solvers and write traces and a summary table"),
        ("diagnose", "print the spectral report as JSON"),
        ("ns", "run Picard iterations for steady Navier-Stokes and export fields"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--preset", help=f"named experiment: {', '.join(PRESETS)}")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="seed for synthetic problems")
        p.add_argument("--format", choices=FORMATS, help="trace file format (overrides the config)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "generate":
            cmd_generate(cfg)
            return EXIT_OK
        if args.command == "diagnose":
            cmd_diagnose(cfg)
            return EXIT_OK
        _, broke = (cmd_solve if args.command == "solve" else cmd_ns)(cfg)
        return EXIT_BREAKDOWN if broke else EXIT_OK
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except BreakdownError as exc:
        print(f"breakdown: {exc}", file=_sys.stderr)
        return EXIT_BREAKDOWN
    except OSError as exc:
        print(f"I/O error: {exc}", file=_sys.stderr)
        return EXIT_IO
    except UzawaError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_BREAKDOWN


if __name__ == "__main__":
    _sys.exit(main())
