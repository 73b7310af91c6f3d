"""Command line entry point: ``dimgp <command> ...``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .clinic import get_clinic
from .dimensions import tree_dim_gap
from .engine import N_JOBS_ENV
from .experiments import (
    SuiteConfig,
    _parse_clinics,
    dome_report,
    load_suite,
    read_best_rules,
    run_suite,
)
from .repair import Infeasible, RepairLog, build_problem, repair_tree, solve
from .rules import MANUAL_RULES, RULE_NAMES
from .tree import ParseError, format_tree, parse_tree


def _clinic_arg(text: str):
    if text == "all":
        return "all"
    try:
        cid = int(text)
        get_clinic(cid)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a grid id 1-24 or 'all', got {text!r}") from exc
    return cid


def _suite(args, methods) -> SuiteConfig:
    suite = load_suite(args.config) if getattr(args, "config", None) else SuiteConfig(
        clinics=_parse_clinics("all"), methods=methods
    )
    changes = {"methods": tuple(methods)}
    if args.clinic is not None:
        changes["clinics"] = _parse_clinics(args.clinic)
    if getattr(args, "runs", None) is not None:
        changes["runs"] = args.runs
    if args.seed is not None:
        changes["seed_base"] = args.seed
    if getattr(args, "replications", None) is not None:
        changes["engine"] = replace(suite.engine, test_replications=args.replications)
    return replace(suite, **changes)


def cmd_evolve(args) -> int:
    method = "GP" if args.no_repair else "GPDR"
    suite = _suite(args, [method])
    rows = run_suite(suite, args.output, n_jobs=args.jobs)
    for r in rows:
        print(f"clinic {r.clinic:>2} {r.method:<5} TC {r.mean_tc:.4f} (std {r.std_tc:.4f}, runs {r.runs})")
    print(f"results written to {Path(args.output) / 'results.csv'}")
    return 0


def cmd_baselines(args) -> int:
    suite = _suite(args, list(args.rule or MANUAL_RULES))
    rows = run_suite(suite, args.output, n_jobs=args.jobs)
    for r in rows:
        print(f"clinic {r.clinic:>2} {r.method:<6} TC {r.mean_tc:.4f} +/- {r.ci_half_width:.4f}")
    print(f"results written to {Path(args.output) / 'results.csv'}")
    return 0


def cmd_repair_tree(args) -> int:
    tree = parse_tree(args.expr)
    root, gap = tree_dim_gap(tree, args.target_dim)
    print(f"input      {format_tree(tree)}")
    print(f"root dim   {root}  gap {gap}")
    try:
        problem = build_problem(tree, args.target_dim)
        sol = solve(problem)
    except Infeasible:
        print("model      infeasible; mutating until a repairable tree appears")
    else:
        print(f"objective  {sol.objective}")
        for k in sol.changed:
            node = problem.nodes[k]
            print(f"  node {k} ({node.name}, depth {node.depth}) -> class {sol.classes[k]}")
    log = RepairLog()
    fixed = repair_tree(tree, args.target_dim, None, np.random.default_rng(args.seed), log)
    print(f"repaired   {format_tree(fixed)}")
    if log.mutations or log.fallbacks:
        print(f"mutations  {log.mutations}  fallbacks {log.fallbacks}")
    return 0


def cmd_dome_report(args) -> int:
    text = dome_report(read_best_rules(args.input))
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dimgp",
        description="Evolve dimensionally consistent appointment rules.",
        epilog=f"Worker count: --jobs, else the {N_JOBS_ENV} environment variable, else 1.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    ev = sub.add_parser("evolve", help="run the evolutionary search")
    ev.add_argument("--clinic", type=_clinic_arg, default=None, help="grid id 1-24 or 'all'")
    ev.add_argument("--runs", type=int, default=None)
    ev.add_argument("--seed", type=int, default=None, help="seed base")
    ev.add_argument("--config", default=None, help="JSON suite/engine configuration")
    ev.add_argument("--no-repair", action="store_true", help="standard GP without repair")
    ev.add_argument("--output", default="results")
    ev.add_argument("--jobs", type=int, default=None)
    ev.set_defaults(func=cmd_evolve)

    bl = sub.add_parser("baselines", help="evaluate the manual rules")
    bl.add_argument("--clinic", type=_clinic_arg, default="all")
    bl.add_argument("--seed", type=int, default=None)
    bl.add_argument("--rule", action="append", choices=RULE_NAMES, help="repeatable; default: all manual rules")
    bl.add_argument("--replications", type=int, default=None)
    bl.add_argument("--output", default="results")
    bl.add_argument("--jobs", type=int, default=None)
    bl.set_defaults(func=cmd_baselines)

    rt = sub.add_parser("repair-tree", help="repair one tree given in prefix form")
    rt.add_argument("--expr", required=True)
    rt.add_argument("--target-dim", type=int, choices=(0, 1), default=0)
    rt.add_argument("--seed", type=int, default=0)
    rt.set_defaults(func=cmd_repair_tree)

    dr = sub.add_parser("dome-report", help="interval profiles of best rules as CSV")
    dr.add_argument("--input", required=True)
    dr.add_argument("--output", default=None)
    dr.set_defaults(func=cmd_dome_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
