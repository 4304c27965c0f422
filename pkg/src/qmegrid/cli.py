"""Command-line entry point: ``qmegrid {run,oracle,compare,bench,subspace}``.

Exit status: 0 on success, 1 when an invariant check or comparison fails,
2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .grid import SUPPORTED_SIDES
from .model import ModelParams, build_channels
from .oracle import brute_force_reachable
from .sim import (ConfigError, RunConfig, TrajectoryRecord, bench, bench_table, compare_runs, emit_reports,
                  fig5_preset, load_config, run_simulation)
from .subspace import BasisState, dimension_ratio, memory_ratio, tcm_subspace
from .tensor import MATRIX_MAGIC, read_matrix, write_matrix

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2
BRUTE_FORCE_LIMIT = 6

# flag name -> RunConfig field
_MODEL_FLAGS = {
    "n_at": int, "g_over_E": float, "gamma_dt": float, "gamma_prime_dt": float, "dt": float,
    "steps": int, "k_max": int, "grid_side": int,
}


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file; flags override its keys")
    p.add_argument("--preset", choices=["fig5"], help="start from a named parameter set")
    for name, typ in _MODEL_FLAGS.items():
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ)
    p.add_argument("--executor", choices=["serial", "threads"])
    p.add_argument("--out", type=Path, help="directory for trajectory.tsv, timing.json, run.json")
    p.add_argument("--dump-state", type=Path, help="write the final density matrix in matrix text format")


def _config_from_args(args: argparse.Namespace, mode: str | None = None) -> RunConfig:
    overrides = {k: getattr(args, k) for k in _MODEL_FLAGS if getattr(args, k, None) is not None}
    if getattr(args, "executor", None):
        overrides["executor"] = args.executor
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode
    if mode is not None:
        overrides["mode"] = mode
    if args.config is not None:
        base = load_config(args.config)
    elif args.preset == "fig5":
        base = fig5_preset()
    else:
        base = RunConfig()
    cfg = replace(base, **overrides)
    cfg.validate()
    return cfg


def _print_run(result, out: Path | None) -> None:
    traj = result.trajectory
    final = traj.populations[-1]
    print(f"n_at={result.config.n_at} steps={result.config.steps} grid={result.config.grid_side}x"
          f"{result.config.grid_side} mode={result.config.mode} wall={result.wall_time:.2f}s")
    print("final populations: " + " ".join(f"P_{n}={p:.6f}" for n, p in enumerate(final)))
    print(f"final trace={traj.traces[-1]:.15f} hermiticity_defect={traj.hermiticity[-1]:.3e}")
    for phase in ("unitary", "dissipator"):
        rep = result.timing.get(phase)
        if rep is not None:
            print(f"{phase}: wall={rep.max_total:.4f}s mean_mac={rep.mean_mac:.4f}s "
                  f"mean_comm={rep.mean_comm:.4f}s events={rep.comm_events}")
    if out is not None:
        print(f"reports written to {out}")
    for v in result.violations:
        print(f"VIOLATION: {v}", file=sys.stderr)


def cmd_run(args: argparse.Namespace, mode: str | None = None) -> int:
    cfg = _config_from_args(args, mode)
    result = run_simulation(cfg)
    out = args.out or (Path(cfg.output_dir) if cfg.output_dir else None)
    if out is not None:
        emit_reports(result, out)
    if args.dump_state is not None:
        write_matrix(args.dump_state, result.final_state)
    _print_run(result, out)
    return EXIT_OK if result.ok else EXIT_VIOLATION


def cmd_oracle(args: argparse.Namespace) -> int:
    return cmd_run(args, mode="oracle")


def cmd_compare(args: argparse.Namespace) -> int:
    first = Path(args.a).read_text().lstrip()
    if first.startswith(MATRIX_MAGIC):
        a, b = read_matrix(args.a), read_matrix(args.b)
        if a.shape != b.shape:
            print(f"shape mismatch: {a.shape} vs {b.shape}", file=sys.stderr)
            return EXIT_VIOLATION
        dev = float(np.max(np.abs(a - b))) if a.size else 0.0
        print(f"max_elementwise_deviation\t{dev:.6e}\nresult\t{'ok' if dev <= args.tol else 'MISMATCH'}")
        return EXIT_OK if dev <= args.tol else EXIT_VIOLATION
    report = compare_runs(TrajectoryRecord.read(args.a), TrajectoryRecord.read(args.b), tol=args.tol)
    sys.stdout.write(report.to_text())
    return EXIT_OK if report.ok else EXIT_VIOLATION


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    sides = [int(s) for s in args.grid_sides.split(",")]
    for s in sides:
        if s not in SUPPORTED_SIDES:
            raise ConfigError(f"grid side {s} not in {SUPPORTED_SIDES}")
    rows = bench(cfg, sides)
    table = bench_table(rows)
    sys.stdout.write(table)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "bench.tsv").write_text(table)
    return EXIT_OK


def cmd_subspace(args: argparse.Namespace) -> int:
    space = tcm_subspace(args.n_at, influx=args.influx)
    full = space.full_dim
    channels = build_channels(ModelParams(args.n_at), space)
    report = {
        "n_at": args.n_at,
        "dimension": space.dim,
        "expected_3_pow_n": 3**args.n_at,
        "full_dimension": full,
        "dimension_ratio": dimension_ratio(space.dim, full),
        "memory_ratio": memory_ratio(space.dim, full),
        "channels": len(channels),
    }
    status = EXIT_OK if space.dim == 3**args.n_at else EXIT_VIOLATION
    if args.verify:
        if args.n_at > BRUTE_FORCE_LIMIT:
            print(f"brute-force check skipped: n_at > {BRUTE_FORCE_LIMIT}", file=sys.stderr)
        else:
            reach = brute_force_reachable(args.n_at, BasisState.all_excited(args.n_at).word)
            report["brute_force_match"] = reach == space.words()
            if not report["brute_force_match"]:
                status = EXIT_VIOLATION
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(f"n_at={args.n_at} dimension={space.dim} (3^n_at={3**args.n_at}) full={full}")
        print(f"dimension ratio={report['dimension_ratio']:.4%} memory ratio={report['memory_ratio']:.4%}")
        print(f"loss channels M={len(channels)}")
        if "brute_force_match" in report:
            print(f"brute-force reachability over 4^n_at states: "
                  f"{'match' if report['brute_force_match'] else 'MISMATCH'}")
    if args.export is not None:
        args.export.write_text(space.export())
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmegrid", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="distributed split-step simulation")
    _add_model_flags(p)
    p.add_argument("--mode", choices=["distributed", "oracle", "both"])
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("oracle", help="dense single-worker reference run")
    _add_model_flags(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("compare", help="compare two trajectory (or matrix) files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="grid-size sweep with per-phase timing")
    _add_model_flags(p)
    p.add_argument("--grid-sides", default="1,2,4")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("subspace", help="reachable-basis dimension and memory report")
    p.add_argument("--n-at", dest="n_at", type=int, required=True)
    p.add_argument("--influx", action="store_true", help="include influx moves (reverses of losses)")
    p.add_argument("--verify", action="store_true", help=f"brute-force check for n_at <= {BRUTE_FORCE_LIMIT}")
    p.add_argument("--export", type=Path, help="write the index -> state listing")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_subspace)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
