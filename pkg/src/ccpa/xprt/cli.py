"""Command-line entry point: ``ccpa <subcommand> --config PATH [...]``."""
from __future__ import annotations

import argparse
import sys

from ..errors import ConfigError, InfeasibleError, SolverError
from . import experiments as ex
from .config import METHODS, ExperimentConfig, load_config

EXIT_OK, EXIT_INFEASIBLE, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3, 4

COMMANDS = {
    "optimize": ex.run_optimize,
    "exit-surface": ex.run_exit_surface,
    "trajectory": ex.run_trajectory,
    "papr": ex.run_papr,
    "sweep": ex.run_sweep,
    "fit-j": ex.run_fit_j,
    "decoder-exit": ex.run_decoder_exit,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ccpa", description="Convergence-constrained power "
                                 "allocation for turbo-equalized SC-FDMA uplinks.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat YAML config (defaults apply when omitted)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--method", choices=METHODS)
        p.add_argument("--threads", type=int)
    return ap


def _config(args) -> ExperimentConfig:
    over = dict(seed=args.seed, out_dir=args.out, method=args.method, threads=args.threads)
    if args.config:
        return load_config(args.config, **over)
    return ExperimentConfig(**{k: v for k, v in over.items() if v is not None})


def _summary(command, res) -> str:
    if command == "optimize":
        return f"snr_db={res['snr_db']:.4f} min_slack={res['min_slack']:.3e}"
    if command == "papr":
        return f"ccdf_knee_db={res['knee_db']:.4f}"
    if command == "sweep":
        return f"points={len(res['rows'])}"
    return "done"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        res = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error [{exc.field or 'config'}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        where = ""
        if exc.where is not None:
            u, k = exc.where
            where = f" at user {u}" + ("" if k is None else f", k={k + 1}")
        print(f"infeasible{where}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"{args.command}: {_summary(args.command, res)} -> {cfg.out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
