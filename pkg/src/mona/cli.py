"""Command-line entry point: ``mona <subcommand> [options]``.

Exit codes: 0 success, 2 invalid input or configuration, 3 I/O failure,
4 numerical failure. Set ``MONA_LOG`` (``debug``, ``info``, ``warning``) to
control log verbosity on stderr.
"""

from __future__ import annotations

import argparse
import copy
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import PipelineConfig, config_from_dict
from .errors import NumericalError, ValidationError
from .formats import load_json
from .pipeline import (
    run_batch,
    run_evaluate,
    run_evaluate_trajectories,
    run_extract_dynamic,
    run_filter_objects,
    run_pipeline,
    run_simulate,
)

EXIT_OK, EXIT_INPUT, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("mona")

# flag dest -> (section, key)
_OVERRIDES = {
    "tau0": ("filter", "tau_0"),
    "flow_scale": ("dynamic", "flow_scale"),
    "theta_min": ("dynamic", "theta_min"),
    "p_min": ("dynamic", "p_min"),
    "lam": ("dynamic", "lambda"),
    "grid_k": ("dynamic", "grid_k"),
    "align": ("eval", "align"),
    "rpe_delta": ("eval", "rpe_delta"),
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="override the configuration seed")
    common.add_argument("--out", type=Path, required=True, help="output directory")
    common.add_argument("--in", dest="in_dir", type=Path, help="input directory (defaults to --out)")
    common.add_argument("--tau0", type=float, help="base dynamic-point count for box filtering")
    common.add_argument("--flow-scale", type=float, help="flow threshold multiplier c")
    common.add_argument("--theta-min", type=float, help="flow threshold floor in pixels")
    common.add_argument("--p-min", type=float, help="minimum dynamic probability")
    common.add_argument("--lambda", dest="lam", type=float, help="scale-matrix regulariser")
    common.add_argument("--grid-k", type=int, help="anchor grid size k (k x k cells)")
    common.add_argument("--align", choices=("se3", "sim3"), help="trajectory alignment")
    common.add_argument("--rpe-delta", type=int, help="frame gap for relative pose error")

    p = argparse.ArgumentParser(prog="mona", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mona {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate a synthetic scene package")
    sub.add_parser("extract-dynamic", parents=[common], help="classify dynamic points")
    sub.add_parser("filter-objects", parents=[common], help="filter detector boxes and rasterise masks")
    ev = sub.add_parser("evaluate", parents=[common], help="score trajectories or pipeline artifacts")
    ev.add_argument("--est", type=Path, help="estimated trajectory (TUM)")
    ev.add_argument("--ref", type=Path, help="reference trajectory (TUM)")
    pl = sub.add_parser("pipeline", parents=[common], help="run every stage end to end")
    pl.add_argument("--seeds", type=int, help="batch mode: run this many consecutive seeds")
    pl.add_argument("--jobs", type=int, default=1, help="parallel workers in batch mode")
    return p


def _load(args) -> PipelineConfig:
    doc = load_json(args.config) if args.config is not None else {}
    if not isinstance(doc, dict):
        return config_from_dict(doc, str(args.config))
    doc = copy.deepcopy(doc)
    if args.seed is not None:
        doc["seed"] = args.seed
    for dest, (section, key) in _OVERRIDES.items():
        value = getattr(args, dest)
        if value is not None:
            sec = doc.setdefault(section, {})
            if isinstance(sec, dict):
                sec[key] = value
    return config_from_dict(doc, str(args.config) if args.config else "config")


def _run(args) -> None:
    if args.command == "evaluate" and (args.est or args.ref):
        if not (args.est and args.ref):
            raise ValidationError("--est and --ref must be given together")
        align = args.align or "sim3"
        delta = args.rpe_delta if args.rpe_delta is not None else 1
        if delta < 1:
            raise ValidationError(f"--rpe-delta must be >= 1, got {delta}")
        run_evaluate_trajectories(args.est, args.ref, args.out, align, delta, args.seed)
        return
    cfg = _load(args)
    if args.command == "simulate":
        run_simulate(cfg, args.out)
    elif args.command == "extract-dynamic":
        run_extract_dynamic(cfg.dynamic, args.out, args.in_dir)
    elif args.command == "filter-objects":
        run_filter_objects(cfg.filter, args.out, args.in_dir)
    elif args.command == "evaluate":
        run_evaluate(cfg, args.out, args.in_dir)
    elif args.seeds is not None:
        if args.in_dir is not None:
            raise ValidationError("--seeds cannot be combined with --in")
        if args.jobs < 1:
            raise ValidationError(f"--jobs must be >= 1, got {args.jobs}")
        run_batch(cfg, args.out, args.seeds, args.jobs)
    else:
        run_pipeline(cfg, args.out, args.in_dir)


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("MONA_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="mona: %(levelname)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        _run(args)
    except ValidationError as exc:
        print(f"mona {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"mona {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"mona {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
