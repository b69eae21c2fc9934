"""Command line: ``uadce run | report | verify``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ABLATIONS, apply_env, load_config, preset


def _run(args) -> int:
    from .trainer import run_experiment

    cfg = load_config(args.config) if args.config else apply_env(preset(args.preset))
    ablations = tuple(cfg.ablations) + tuple(args.ablation or ())
    cfg = cfg.with_overrides(seed=args.seed, out=args.out, ablations=ablations)
    report = run_experiment(cfg, resume_from=args.resume)
    print(report.table())
    print(f"artifacts written to {cfg.out}")
    return 0


def _report(args) -> int:
    from .report import render

    print(render(args.run_dir, plot=not args.no_plot))
    return 0


def _verify(args) -> int:
    from .golden import golden_checks

    checks = golden_checks(args.table or None)
    failed = 0
    for c in checks:
        if args.verbose or not c.ok:
            print(c.line())
        failed += not c.ok and not c.known_inconsistent
    flagged = sum(not c.ok and c.known_inconsistent for c in checks)
    print(f"{len(checks)} checks: {sum(c.ok for c in checks)} pass, {failed} fail, "
          f"{flagged} reported cells inconsistent with their own row")
    return 1 if failed else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="uadce", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train and evaluate every session of a stream")
    p.add_argument("config", nargs="?", help="TOML config file (default: the desk preset)")
    p.add_argument("--preset", default="desk")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--ablation", action="append", choices=ABLATIONS)
    p.add_argument("--resume", help="session checkpoint to continue from")
    p.set_defaults(func=_run)

    p = sub.add_parser("report", help="render tables and plots from a run directory")
    p.add_argument("run_dir")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=_report)

    p = sub.add_parser("verify", help="recompute PD and average accuracy of published tables")
    p.add_argument("--table", action="append", choices=["CUB200", "CIFAR100", "miniImageNet"])
    p.set_defaults(func=_verify)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
