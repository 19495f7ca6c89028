"""Command line entry point: ``robustcbf run|validate|reproduce|schema``.

Exit codes: 0 success, 1 simulation fault, 2 configuration error. Outputs
are staged in a temporary directory and only moved into place once the whole
experiment has finished, so a failed run leaves nothing half written.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from .config import CONFIG_SCHEMA, PINNED, ConfigError, ExperimentConfig, load_config, parse_config, pinned_config
from .sim import Trajectory, min_h_sweep, simulate, desired_policy
from .systems import coefficients_batch
from .uncertainty import polytopic_overapprox

log = logging.getLogger("robustcbf")

EXIT_OK, EXIT_FAULT, EXIT_CONFIG = 0, 1, 2
FEASIBILITY_GRID = 10_000
MARGIN_TOL = 1e-9


def _fmt(v: float) -> str:
    return repr(float(v))


def _csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _json_num(v):
    # JSON has no NaN/inf
    v = float(v)
    return v if math.isfinite(v) else None


# ---------------------------------------------------------------------------
# experiment modes; each returns (files, summary, faults)


def _verification_states(cfg: ExperimentConfig) -> np.ndarray:
    n = cfg.x_hat.size
    per_axis = max(2, int(math.floor(FEASIBILITY_GRID ** (1.0 / n))))
    hw = cfg.error_set.bounding_half_widths
    axes = [np.linspace(-w, w, per_axis) if w > 0 else np.zeros(1) for w in hw]
    cube = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    return cfg.x_hat + cfg.error_set.project(cube)


def run_static(cfg: ExperimentConfig):
    """Evaluate every filter once at ``x_hat`` and verify the input on a grid of true states."""
    system, cbf = cfg.system()
    m = system.input_dim
    bounds = system.input_bounds if cfg.input_bounds is None else cfg.input_bounds
    states = _verification_states(cfg)
    a, b = coefficients_batch(system, cbf, states)
    files: dict[str, str] = {}
    summary_filters = {}
    rows = [["label", "kind", "status"] + [f"u{i + 1}" for i in range(m)] + ["u_feasible", "min_margin"]]
    for spec in cfg.filters:
        res = spec.evaluate(system, cbf, cfg.x_hat, cfg.error_set, cfg.k_d, bounds)
        entry = {"kind": spec.kind, "status": res.status.value, "u": None, "u_feasible": False, "min_margin": None}
        if res.feasible:
            margin = float(np.min(a @ res.u + b))
            entry.update(u=[float(v) for v in res.u], u_feasible=margin >= -MARGIN_TOL, min_margin=margin)
        summary_filters[spec.label] = entry
        u_cells = [_fmt(v) for v in res.u] if res.feasible else ["nan"] * m
        margin_cell = _fmt(entry["min_margin"]) if res.feasible else "nan"
        rows.append([spec.label, spec.kind, res.status.value] + u_cells + [str(entry["u_feasible"]).lower(), margin_cell])
        if m == 1 and spec.kind in ("decoupled", "duality") and spec.overapprox == "polytope":
            if spec.kind == "decoupled":
                axes = np.vstack([np.eye(2), -np.eye(2)])
                poly = polytopic_overapprox(system, cbf, cfg.x_hat, cfg.error_set, directions=axes, method=spec.support_method)
            else:
                poly = polytopic_overapprox(system, cbf, cfg.x_hat, cfg.error_set, directions=spec.directions, method=spec.support_method)
            verts = poly.vertices()
            files[f"polytope_{spec.label}.csv"] = _csv_text([["a1", "b"]] + [[_fmt(p[0]), _fmt(p[1])] for p in verts])
    files["feasibility.csv"] = _csv_text(rows)
    n = system.state_dim
    head = [f"x{i + 1}" for i in range(n)] + [f"a{i + 1}" for i in range(m)] + ["b"]
    body = [[_fmt(v) for v in (*s, *ai, bi)] for s, ai, bi in zip(states, a, b)]
    files["image.csv"] = _csv_text([head] + body)
    summary = {"filters": summary_filters, "verification_states": int(states.shape[0])}
    return files, summary, []


def _traj_entry(tr: Trajectory, fname: str, magnitude=None) -> dict:
    entry = {
        "trajectory": fname,
        "min_h": tr.min_h,
        "infeasible": tr.any_infeasible,
        "infeasible_steps": tr.infeasible_steps,
        "flagged": tr.flagged,
        "domain_exit": tr.domain_exit,
        "solve_ms": tr.solve_stats(),
    }
    if magnitude is not None:
        entry = {"magnitude": magnitude, **entry}
    return entry


def _aggregate(cells: list[dict]) -> dict:
    steps = sum(c["solve_ms"]["steps"] for c in cells)
    total = sum(c["solve_ms"]["mean_ms"] * c["solve_ms"]["steps"] for c in cells)
    return {
        "min_h": min(c["min_h"] for c in cells),
        "any_infeasible": any(c["infeasible"] for c in cells),
        "infeasible_steps": sum(c["infeasible_steps"] for c in cells),
        "flagged": any(c["flagged"] for c in cells),
        "domain_exit": any(c["domain_exit"] for c in cells),
        "solve_ms": {"steps": steps, "mean_ms": total / steps if steps else 0.0, "max_ms": max(c["solve_ms"]["max_ms"] for c in cells)},
        "cells": cells,
    }


def run_simulate(cfg: ExperimentConfig):
    system, cbf = cfg.system()
    st = cfg.setup
    policy = desired_policy(st.desired, system)
    files, summary_filters, faults = {}, {}, []
    for spec in cfg.filters:
        tr = simulate(
            system, cbf, spec, st.corruption, cfg.error_set, cfg.x0, policy,
            dt=st.dt, horizon=st.horizon, substeps=st.substeps, bounds=st.input_bounds, timing=st.timing,
        )
        fname = f"traj_{spec.label}.csv"
        files[fname] = tr.to_csv()
        summary_filters[spec.label] = _aggregate([_traj_entry(tr, fname)])
        if tr.domain_exit:
            faults.append(f"{spec.label}: state left the model domain")
    return files, {"filters": summary_filters}, faults


def run_sweep(cfg: ExperimentConfig, threads: int = 1):
    table = min_h_sweep(cfg.setup, cfg.magnitudes, cfg.filters, threads=threads, keep=True)
    files = {"sweep.csv": table.to_csv()}
    summary_filters, faults = {}, []
    for spec in cfg.filters:
        cells = []
        for d in table.deltas:
            tr = table.trajectories[(spec.label, d)]
            fname = f"traj_{spec.label}_{_fmt(d)}.csv"
            if cfg.write_trajectories:
                files[fname] = tr.to_csv()
            cells.append(_traj_entry(tr, fname if cfg.write_trajectories else None, d))
            if tr.domain_exit:
                faults.append(f"{spec.label} at magnitude {d}: state left the model domain")
        agg = _aggregate(cells)
        agg["first_infeasible"] = table.first_infeasible(spec.label)
        summary_filters[spec.label] = agg
    return files, {"magnitudes": table.deltas, "filters": summary_filters}, faults


def execute(cfg: ExperimentConfig, threads: int = 1):
    """Run an experiment in memory; returns ``(files, summary, faults)``."""
    if cfg.mode == "static":
        files, summary, faults = run_static(cfg)
    elif cfg.mode == "simulate":
        files, summary, faults = run_simulate(cfg)
    else:
        files, summary, faults = run_sweep(cfg, threads)
    summary = {
        "name": cfg.name,
        "mode": cfg.mode,
        "benchmark": cfg.benchmark,
        "seed": cfg.seed,
        "faults": faults,
        **summary,
        "config": cfg.raw,
    }
    summary = _clean_json(summary)
    files["summary.json"] = json.dumps(summary, indent=2, allow_nan=False) + "\n"
    return files, summary, faults


def _clean_json(obj):
    if isinstance(obj, dict):
        return {k: _clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean_json(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return _json_num(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_bundle(files: dict[str, str], out_dir: Path) -> None:
    """Stage every file, then move them into ``out_dir`` together."""
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".robustcbf-", dir=out_dir.parent))
    try:
        for name, text in files.items():
            with open(stage / name, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
        out_dir.mkdir(exist_ok=True)
        for name in files:
            os.replace(stage / name, out_dir / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def run_config(cfg: ExperimentConfig, out_dir: Path, threads: int = 1) -> int:
    log.info("running %s (%s, %s) into %s", cfg.name, cfg.mode, cfg.benchmark, out_dir)
    try:
        files, summary, faults = execute(cfg, threads)
    except Exception as exc:  # any failure past validation is a simulation fault
        log.debug("simulation fault", exc_info=True)
        print(f"error: simulation fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAULT
    write_bundle(files, out_dir)
    _report(summary, out_dir)
    for f in faults:
        print(f"fault: {f}", file=sys.stderr)
    return EXIT_FAULT if faults else EXIT_OK


def _report(summary: dict, out_dir: Path) -> None:
    print(f"{summary['name']}: wrote {out_dir}")
    for label, entry in summary["filters"].items():
        if summary["mode"] == "static":
            print(f"  {label:<12} {entry['status']:<13} u_feasible={str(entry['u_feasible']).lower()}")
        else:
            print(f"  {label:<12} min_h={entry['min_h']:+.6f} infeasible_steps={entry['infeasible_steps']}")


# ---------------------------------------------------------------------------
# argument handling


def _configure_logging() -> None:
    """Verbosity from ROBUSTCBF_LOG (a logging level name, default WARNING)."""
    level = logging.getLevelName(os.environ.get("ROBUSTCBF_LOG", "WARNING").upper())
    if not isinstance(level, int):
        level = logging.WARNING
    log.setLevel(level)
    if not log.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(handler)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustcbf", description="Robust CBF safety filters under state-estimation error.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", type=Path, default=Path("robustcbf-out"), help="parent directory of the artifact bundle")
        p.add_argument("--seed", type=int, default=None, help="override the configuration seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")

    p_run = sub.add_parser("run", help="run an experiment from a JSON configuration")
    p_run.add_argument("config", type=Path)
    common(p_run)
    p_val = sub.add_parser("validate", help="check a configuration without running it")
    p_val.add_argument("config", type=Path)
    p_val.add_argument("--seed", type=int, default=None)
    p_rep = sub.add_parser("reproduce", help="run a built-in example")
    p_rep.add_argument("name", help=f"one of {', '.join(PINNED)}")
    common(p_rep)
    sub.add_parser("schema", help="print the configuration JSON schema")
    return parser


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "schema":
        print(json.dumps(CONFIG_SCHEMA, indent=2))
        return EXIT_OK
    try:
        if args.command == "reproduce":
            cfg = parse_config(pinned_config(args.name), args.seed)
        else:
            cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.mode}, {cfg.benchmark}, {len(cfg.filters)} filters)")
        return EXIT_OK
    return run_config(cfg, args.out_dir / cfg.name, args.threads)


if __name__ == "__main__":
    sys.exit(main())
