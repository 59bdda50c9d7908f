"""Command-line interface.

Subcommands: gen (instance files + manifest), solve (one instance),
bounds (profile CSV for one instance), validate (small-N solver and bound
comparison tables), scaling (profiles, fits, parameter model, metrics).

Exit codes are a stable scripting contract:
  0  success
  1  input/configuration problem (bad file, bad flag, missing data)
  2  capacity refusal (problem too large for the requested method)
  3  numerical failure (non-convergence, quadrature or fit breakdown)
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import io as kio
from .bounds import bounds_profile
from .errors import (
    CalibrationError,
    CapacityError,
    ConvergenceError,
    EdgeError,
    FitError,
    InputError,
    QuadratureError,
)
from .exhaustive import solve_exhaustive
from .experiments import ExperimentConfig, load_config, run_gen, run_scaling, run_validate
from .transform import solve_itm

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CAPACITY = 2
EXIT_NUMERICAL = 3


def _common_flags(sub: argparse.ArgumentParser):
    sub.add_argument("--config", default=None, help="JSON config file")
    sub.add_argument("--jobs", type=int, default=None, help="worker processes")
    sub.add_argument("--scale", type=float, default=None,
                     help="multiply instance counts by this factor")
    sub.add_argument("--seed", type=int, default=None, help="base seed override")
    sub.add_argument("--out", default=None, help="output directory or file")
    sub.add_argument("--force", action="store_true",
                     help="overwrite existing outputs")


def _resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config)
    updates = {}
    if args.jobs is not None:
        updates["jobs"] = args.jobs
    if args.scale is not None:
        updates["scale"] = args.scale
    if args.seed is not None:
        updates["base_seed"] = args.seed
    if args.out is not None:
        updates["out_dir"] = args.out
    return dataclasses.replace(config, **updates) if updates else config


def _cmd_gen(args) -> int:
    manifest = run_gen(_resolve_config(args), force=args.force)
    print(f"wrote {manifest}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    run_validate(_resolve_config(args))
    out = Path(_resolve_config(args).out_dir) / "tables"
    print(f"wrote {out / 'validation_oracle.csv'} and {out / 'validation_bounds.csv'}")
    return EXIT_OK


def _cmd_scaling(args) -> int:
    config = _resolve_config(args)
    run_scaling(config)
    print(f"wrote tables under {Path(config.out_dir) / 'tables'}")
    return EXIT_OK


def _cmd_solve(args) -> int:
    instance = kio.load_instance(args.instance)
    method = args.method
    if method == "auto":
        method = "exhaustive" if instance.n_bets <= 12 else "itm"
    if method == "exhaustive":
        res = solve_exhaustive(instance.bets)
    else:
        res = solve_itm(instance.bets)
    doc = kio.result_to_dict(res, method)
    if args.out:
        kio.write_json_atomic(args.out, doc)
        print(f"wrote {args.out}")
    else:
        print(json.dumps(doc, indent=2))
    return EXIT_OK


def parse_n_grid(spec: str | None, n_bets: int) -> list[int] | None:
    """Accept either 'N/k' (k evenly spaced sizes) or a comma list."""
    if spec is None:
        return None
    spec = spec.strip()
    if spec.upper().startswith("N/"):
        try:
            steps = int(spec[2:])
        except ValueError:
            raise InputError(f"bad n-grid spec {spec!r}")
        if steps < 1:
            raise InputError(f"bad n-grid spec {spec!r}")
        step = max(1, round(n_bets / steps))
        grid = list(range(step, n_bets + 1, step))
        if grid[-1] != n_bets:
            grid.append(n_bets)
        return grid
    try:
        return [int(tok) for tok in spec.split(",") if tok.strip()]
    except ValueError:
        raise InputError(f"bad n-grid spec {spec!r}")


def _cmd_bounds(args) -> int:
    instance = kio.load_instance(args.instance)
    grid = parse_n_grid(args.n_grid, instance.n_bets)
    profile = bounds_profile(instance, n_grid=grid, solver=args.solver,
                             stop_at_shortfall=args.target_gap)
    if args.out:
        kio.save_profile_csv(profile, args.out)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(
            kio._csv_text("bounds-profile", kio.PROFILE_HEADER,
                          kio.profile_rows(profile))
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kellyopt",
        description="Log-optimal betting at scale: solvers, bounds, scaling laws.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate instance files and a manifest")
    _common_flags(p_gen)
    p_gen.set_defaults(func=_cmd_gen)

    p_solve = sub.add_parser("solve", help="solve a single instance file")
    p_solve.add_argument("instance", help="instance JSON path")
    p_solve.add_argument("--method", choices=["auto", "exhaustive", "itm"],
                         default="auto")
    p_solve.add_argument("--out", default=None, help="result JSON path")
    p_solve.set_defaults(func=_cmd_solve)

    p_bounds = sub.add_parser("bounds", help="bound profile for one instance")
    p_bounds.add_argument("instance", help="instance JSON path")
    p_bounds.add_argument("--n-grid", default=None,
                          help="'N/20' or comma-separated sizes")
    p_bounds.add_argument("--target-gap", type=float, default=None,
                          help="stop once the ratio reaches this value")
    p_bounds.add_argument("--solver", choices=["auto", "exhaustive", "itm"],
                          default="auto")
    p_bounds.add_argument("--out", default=None, help="profile CSV path")
    p_bounds.set_defaults(func=_cmd_bounds)

    p_val = sub.add_parser("validate", help="small-N comparison tables")
    _common_flags(p_val)
    p_val.set_defaults(func=_cmd_validate)

    p_scal = sub.add_parser("scaling", help="profiles, fits, model, metrics")
    _common_flags(p_scal)
    p_scal.set_defaults(func=_cmd_scaling)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, EdgeError, CalibrationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (ConvergenceError, QuadratureError, FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
