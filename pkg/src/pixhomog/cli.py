"""Command-line entry point: ``pixhomog <subcommand> config.toml``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .exceptions import (ConfigError, GenerationFailure, ParseError, PixHomogError,
                         UnmappedPhase)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
_INPUT_ERRORS = (ConfigError, ParseError, UnmappedPhase, GenerationFailure, FileNotFoundError)
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def build_parser():
    p = argparse.ArgumentParser(prog="pixhomog", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help="cap on worker threads (default: config value or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate or load the image and write it as PGM")
    s.add_argument("config", nargs="?")
    s.add_argument("--spec", help='e.g. "circular_inclusions(5, 0.2419, 7)"')
    s.add_argument("--size", type=int, help="edge length in pixels")
    s.add_argument("--out", default="out", help="output directory")

    for name, text in (("homogenize", "effective tensor A0 as JSON"),
                       ("coarsen-study", "error table over coarsening steps"),
                       ("macro-run", "two-scale cantilever run"),
                       ("validate", "invariant checks on the configured mesh")):
        c = sub.add_parser(name, help=text)
        c.add_argument("config")
        _coarsening_flags(c)
    e = sub.add_parser("export-mesh", help="mesh as legacy VTK")
    e.add_argument("config")
    e.add_argument("--matrix", action="store_true", help="also dump K and G as Matrix Market")
    _coarsening_flags(e)
    return p


def _coarsening_flags(parser):
    parser.add_argument("--variant", choices=("a", "b"))
    parser.add_argument("--steps", type=int, help="uniform coarsening steps")
    parser.add_argument("--adaptive-steps", type=int)


def _config(args):
    from .config import RunConfig, load_config
    if args.command == "synth" and args.config is None:
        if not (args.spec and args.size):
            raise ConfigError("synth needs a config file or both --spec and --size")
        cfg = RunConfig(synth=args.spec, width_px=args.size, height_px=args.size,
                        output_dir=Path(args.out))
        cfg.synth_spec()
    else:
        cfg = load_config(args.config)
    for flag, attr in (("variant", "variant"), ("steps", "uniform_steps"),
                       ("adaptive_steps", "adaptive_steps")):
        value = getattr(args, flag, None)
        if value is not None:
            if isinstance(value, int) and value < 0:
                raise ConfigError(f"--{flag.replace('_', '-')} must be nonnegative")
            setattr(cfg, attr, value)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        cfg.threads = args.threads
    return cfg


def _print_summary(command, summary):
    if command == "coarsen-study":
        for r in summary["rows"]:
            print(f"{r['kind']:>10} step {r['step']}: {r['px']:>9} ndof {r['ndof']:>7} "
                  f"e_total {r['e_total']:.4e} e_disc {r['e_disc']:.4e} "
                  f"e_model {r['e_model']:.4e} theta {r['theta']:.4f}")
    elif command == "macro-run":
        print(f"u_max = {summary['u_max_mm']:.4f} mm (Timoshenko {summary['timoshenko_mm']:.4f}), "
              f"max von Mises = {summary['von_mises_max_mpa']:.4f} MPa")
    elif command == "validate":
        for k, v in summary["checks"].items():
            print(f"{'PASS' if v else 'FAIL'}  {k}")
    elif command == "homogenize":
        a = summary["A0"]
        print(f"A11 {a['A11']:.4f}  A22 {a['A22']:.4f}  A33 {a['A33']:.4f}  A12 {a['A12']:.4f}")
    else:
        print(" ".join(f"{k}={v}" for k, v in summary.items() if not isinstance(v, dict)))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        for var in _THREAD_VARS:
            os.environ.setdefault(var, str(cfg.threads))
        from . import pipeline
        if args.command == "synth":
            summary = pipeline.run_synth(cfg)
        elif args.command == "homogenize":
            summary = pipeline.run_homogenize(cfg)
        elif args.command == "coarsen-study":
            summary = pipeline.run_coarsen_study(cfg)
        elif args.command == "macro-run":
            summary = pipeline.run_macro(cfg)
        elif args.command == "validate":
            summary = pipeline.run_validate(cfg)
        else:
            summary = pipeline.run_export_mesh(cfg, matrix=args.matrix)
    except _INPUT_ERRORS as exc:
        print(f"pixhomog: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PixHomogError, ArithmeticError, RuntimeError) as exc:
        print(f"pixhomog: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _print_summary(args.command, summary)
    if args.command == "validate" and not summary["passed"]:
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
