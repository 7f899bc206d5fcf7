"""Command-line entry point.

::

    flashopt check   [--config FILE]      derivative verification
    flashopt escape  [--config FILE]      NCD3 decrement experiment
    flashopt run {flash-fs,flash-st,scsg} FLASH runs or SCSG epoch-bound check
    flashopt certify --point FILE         dense SOSP certificate of a point
    flashopt bench   [--config FILE]      paired NCD3 vs NCD2 evaluation counts
    flashopt repro                        full acceptance suite

Every subcommand exits 0 exactly when all of its checks pass.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .harness import ALGORITHMS, default_config, dumps_json, parse_config, run_experiment
from .oracle import ConfigurationError, ContractViolation


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="INI experiment file")
    p.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    p.add_argument("--out-dir", type=Path, help="artifact directory (default: out)")
    p.add_argument("--format", choices=("csv", "json"), help="table format")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flashopt", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("check", "derivative verification on a built-in problem"),
                       ("escape", "repeated NCD3 steps at a saddle"),
                       ("bench", "paired NCD3 versus NCD2 FLASH runs")):
        _common(sub.add_parser(name, help=text))
    run = sub.add_parser("run", help="FLASH drivers or the SCSG epoch-bound experiment")
    run.add_argument("algorithm", choices=ALGORITHMS)
    _common(run)
    cert = sub.add_parser("certify", help="certify a point read from a file")
    cert.add_argument("--point", type=Path, help="JSON list or whitespace-separated coordinates")
    _common(cert)
    repro = sub.add_parser("repro", help="run the acceptance suite")
    repro.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args):
    algorithm = getattr(args, "algorithm", None)
    base = default_config(args.command, algorithm)
    cfg = parse_config(args.config.read_text(), base) if args.config else base
    if algorithm is not None and cfg.algorithm != algorithm:
        cfg = replace(cfg, algorithm=algorithm)
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if args.out_dir is not None:
        overrides["out_dir"] = str(args.out_dir)
    if args.format is not None:
        overrides["fmt"] = args.format
    if getattr(args, "point", None) is not None:
        overrides["point_file"] = str(args.point)
    return replace(cfg, **overrides) if overrides else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "repro":
        from .acceptance import run_all

        results = run_all()
        failed = sum(not r.passed for r in results)
        print(f"{len(results) - failed}/{len(results)} criteria passed")
        return 0 if failed == 0 else 1
    try:
        cfg = _config(args)
        result = run_experiment(cfg)
    except (ConfigurationError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(dumps_json(result.summary))
    for label, path in result.paths.items():
        print(f"wrote {label}: {path}", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
