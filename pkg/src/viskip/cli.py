"""Command-line front end.

Exit codes: 0 success, 2 config/schema error, 3 divergence,
4 tuning failure, 5 scaling-study failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, DivergenceError, StudyError, TuningError
from .harness import (
    OUT_ENV_VAR,
    SWEEP_GRID,
    params_report,
    parse_config,
    run_experiment,
    scaling_study,
    sweep,
    write_study_csv,
)

EXIT_SCHEMA = 2
EXIT_DIVERGENCE = 3
EXIT_TUNING = 4
EXIT_STUDY = 5


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viskip",
        description="Distributed variational-inequality solvers and the federated "
                    "simulation harness around them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the experiment described by a config")
    run_p.add_argument("--config", required=True, help="path to the experiment config")
    run_p.add_argument("--seed", type=int, default=None, help="override the seed list")
    run_p.add_argument("--out", default=None,
                       help=f"output directory (default: config, then ${OUT_ENV_VAR})")

    sweep_p = sub.add_parser("sweep", help="grid-search the step size 1/(r L)")
    sweep_p.add_argument("--config", required=True)
    sweep_p.add_argument("--grid", default="default",
                         help="'default' or comma-separated divisors")
    sweep_p.add_argument("--out", default=None)

    scale_p = sub.add_parser("scaling", help="communication scaling study")
    scale_p.add_argument("--eps", type=float, default=1e-6)
    scale_p.add_argument("--out", default=None)
    scale_p.add_argument("--seed", type=int, default=1)

    params_p = sub.add_parser("params", help="print resolved problem/solver parameters")
    params_p.add_argument("--config", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = parse_config(args.config)
            if args.seed is not None:
                cfg.seeds = [args.seed]
            result = run_experiment(cfg, out_dir=args.out)
            for path in result["files"]:
                print(path)
            return 0
        if args.command == "sweep":
            cfg = parse_config(args.config)
            grid = SWEEP_GRID if args.grid == "default" \
                else tuple(int(tok) for tok in args.grid.split(","))
            result = sweep(cfg, grid)
            print("divisor,gamma,seed,final_error")
            for divisor, gamma, seed, err in result.table:
                print(f"{divisor},{gamma!r},{seed},{'' if err is None else repr(err)}")
            print(f"# best: 1/({result.best_divisor} L) -> gamma = {result.best_gamma!r}, "
                  f"error = {result.best_error!r}")
            return 0
        if args.command == "scaling":
            result = scaling_study(eps=args.eps, seed=args.seed)
            print(f"slope = {result.slope!r}")
            for ratio, iterations, comms in result.cells:
                print(f"ratio {ratio!r}: {iterations} iterations, {comms} communications")
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                write_study_csv(out / "scaling.csv", result)
            return 0
        if args.command == "params":
            cfg = parse_config(args.config)
            print(json.dumps(params_report(cfg), indent=2, sort_keys=True, default=str))
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except TuningError as exc:
        print(f"tuning failure: {exc}", file=sys.stderr)
        return EXIT_TUNING
    except StudyError as exc:
        print(f"study failure: {exc}", file=sys.stderr)
        return EXIT_STUDY
    return 0


if __name__ == "__main__":
    sys.exit(main())
