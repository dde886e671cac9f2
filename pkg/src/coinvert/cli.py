"""Command-line entry point.

Exit codes: 0 on success, 2 for an invalid configuration, 3 for a
numerical failure inside a stage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .geometry import equispaced_angles, make_random_shape
from .pipeline import (
    STAGES,
    ConfigError,
    ExperimentConfig,
    StageError,
    draw_random_shape,
    run_experiment,
    run_stage,
)
from .specfun import count_n0

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load_config(args) -> ExperimentConfig:
    if args.config is None:
        cfg = ExperimentConfig()
    else:
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError([f"cannot read config: {exc}"]) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config is not valid JSON: {exc}"]) from exc
        try:
            cfg = ExperimentConfig.from_dict(data)
        except TypeError as exc:
            raise ConfigError([str(exc)]) from exc
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _summary(report) -> dict:
    keys = ("name", "seed", "completed", "cavity_error", "termination", "source_errors", "timings")
    return {key: getattr(report, key) for key in keys}


def cmd_run(args) -> int:
    cfg = _load_config(args)
    report = run_experiment(cfg, args.out, until=args.stage or "reconstruct")
    print(json.dumps(_summary(report), indent=2))
    return EXIT_OK


def cmd_stage(args) -> int:
    cfg = _load_config(args)
    out = args.out or cfg.out_dir
    if out is None:
        raise ConfigError(["--out is required for single-stage runs"])
    report = run_stage(cfg, args.command, out)
    print(json.dumps(_summary(report), indent=2))
    return EXIT_OK


def cmd_random_shape(args) -> int:
    seed = 0 if args.seed is None else args.seed
    spec = draw_random_shape(seed, args.r_lo, args.r_hi, args.inner, args.outer)
    curve = make_random_shape(spec, args.n_nodes)
    payload = {"seed": seed, "n_knots": spec.n_knots, "knot_radii": list(spec.knot_radii)}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        curve.to_csv(out / "random_shape.csv")
        t = equispaced_angles(args.n_nodes)
        np.savetxt(out / "random_shape_radius.csv", np.column_stack([t, spec.radius(t)]), delimiter=",",
                   header="t,r", comments="", fmt="%.17g")
        (out / "random_shape.json").write_text(json.dumps(payload, indent=2))
    print(json.dumps(payload, indent=2))
    return EXIT_OK


def cmd_n0(args) -> int:
    if args.k <= 0 or args.radius <= 0:
        raise ConfigError(["k and radius must be positive"])
    print(count_n0(args.k, args.radius))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coinvert", description="Joint recovery of a sound-soft cavity and interior point sources.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment JSON; built-in defaults when omitted")
        p.add_argument("--seed", type=int, help="master seed, overrides the config")
        p.add_argument("--out", help="artifact directory")

    p = sub.add_parser("run", help="full pipeline")
    common(p)
    p.add_argument("--stage", choices=STAGES, help="stop after this stage")
    p.set_defaults(func=cmd_run)

    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run only the {stage} stage, reading earlier artifacts from --out")
        common(p)
        p.set_defaults(func=cmd_stage)

    p = sub.add_parser("random-shape", help="draw a random spline cavity")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--r-lo", type=float, default=0.4)
    p.add_argument("--r-hi", type=float, default=1.6)
    p.add_argument("--inner", type=float, default=0.0, help="reject curves reaching this radius")
    p.add_argument("--outer", type=float, default=np.inf, help="reject curves reaching this radius")
    p.add_argument("--n-nodes", type=int, default=128)
    p.set_defaults(func=cmd_random_shape)

    p = sub.add_parser("n0", help="number of Dirichlet eigenvalues of a disk below k^2")
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--radius", type=float, required=True)
    p.set_defaults(func=cmd_n0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    with warnings.catch_warnings():
        if not args.verbose:
            warnings.simplefilter("ignore")
        try:
            return args.func(args)
        except ConfigError as exc:
            for line in exc.violations:
                print(f"config error: {line}", file=sys.stderr)
            return EXIT_CONFIG
        except StageError as exc:
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
