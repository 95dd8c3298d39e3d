"""Command-line front end: ``mirrorless <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import ConfigError
from .geometry import METRIC_NAMES
from .harness import default_output_dir, dumps, run_analysis, run_experiment, run_suite
from .objectives import OBJECTIVE_NAMES
from .optimizers import METHODS
from .potentials import POTENTIAL_NAMES

ANALYSIS_ONLY = {"check-hessian-map": "hessian_map_check", "sweep": "discretization_error_sweep"}


def _common(p):
    p.add_argument("--output-dir", type=Path, help="artifact directory (default: $MIRRORLESS_OUTPUT_DIR/<name>)")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")


def _config_cmd(sub, name, help_text):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("config", type=Path, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--tol", type=float, help="override the ODE tolerance")
    _common(p)
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="mirrorless", description="Riemannian first-order optimization experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    _config_cmd(sub, "run", "run an experiment config")
    _config_cmd(sub, "check-hessian-map", "test whether the config's geometry is a Hessian map")
    _config_cmd(sub, "sweep", "endpoint error against the flow for a range of stepsizes")
    p = sub.add_parser("suite", help="run a bundled suite (acceptance, quick) or a suite directory")
    p.add_argument("name")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count)")
    _common(p)
    sub.add_parser("list-builtins", help="list built-in metrics, potentials, objectives and methods")
    return parser


def _load(args):
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, tol=args.tol)


def _analysis_only(cfg, command):
    """Config restricted to one analysis, keeping its params if it was listed."""
    name = ANALYSIS_ONLY[command]
    kept = [a for a in cfg.analyses if a["name"] == name] or [{"name": name}]
    data = json.loads(json.dumps(cfg.data))
    data["analyses"] = kept
    data.pop("assert", None)
    return ExperimentConfig(data, cfg.base_dir)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "list-builtins":
        for title, names in (("metrics", METRIC_NAMES), ("potentials", POTENTIAL_NAMES),
                             ("objectives", OBJECTIVE_NAMES), ("methods", METHODS)):
            print(f"{title}: {', '.join(names)}")
        return 0
    if args.command == "suite":
        try:
            code, report = run_suite(args.name, args.output_dir, args.workers, quiet=args.quiet)
        except FileNotFoundError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        return code
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print("invalid config:", file=sys.stderr)
        for e in exc.errors:
            print(f"  {e}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command in ANALYSIS_ONLY:
        cfg = _analysis_only(cfg, args.command)
    out = args.output_dir if args.output_dir is not None else None
    code = run_experiment(cfg, out, quiet=args.quiet)
    if not args.quiet and args.command in ANALYSIS_ONLY:
        where = out or cfg.data.get("output") or default_output_dir() / cfg.name
        summary = json.loads((Path(where) / "summary.json").read_text())
        print(dumps(summary["analyses"]), end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
