"""Command line entry point: ``p2psla run | validate | report``.

Exit codes: 0 success, 1 runtime or I/O failure, 2 invalid scenario or
arguments.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from ..strategies import StrategyKind
from .config import ScenarioError, load_scenario, parse_strategy
from .plotting import render_figures
from .runner import TRACE_DIR, aggregate_csv, reaggregate, run_matrix, write_outputs

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def parse_seeds(text: str) -> List[int]:
    """``"1-5,9"`` -> [1, 2, 3, 4, 5, 9]; order kept, duplicates dropped."""
    seeds: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            if sep:
                a, b = int(lo), int(hi)
                if b < a:
                    raise ValueError
                seeds.extend(range(a, b + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds or min(seeds) < 0:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}")
    return list(dict.fromkeys(seeds))


def parse_strategies(values: Optional[Sequence[str]]) -> Optional[List[StrategyKind]]:
    if not values:
        return None
    names = [n.strip() for v in values for n in v.split(",") if n.strip()]
    return list(dict.fromkeys(parse_strategy(n, "--strategy") for n in names))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="p2psla", description="SLA violation detection strategy simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate every (strategy, seed) pair of a scenario")
    p_run.add_argument("scenario", type=Path, help="scenario TOML file")
    p_run.add_argument(
        "--strategy",
        action="append",
        metavar="NAME",
        help="strategy to run (repeatable or comma separated; default: the scenario's list)",
    )
    p_run.add_argument("--seeds", type=parse_seeds, help="seed list such as 1-10 or 1,4,7 (default: the scenario's)")
    p_run.add_argument("--out-dir", type=Path, default=Path("results"), help="output directory (default: results)")
    p_run.add_argument("--trace", action="store_true", help="write per-run message, activation and topology traces")
    p_run.add_argument("--jobs", type=int, default=1, help="worker processes (default: 1)")
    p_run.add_argument("--no-figures", action="store_true", help="skip the PNG figures")

    p_val = sub.add_parser("validate", help="check a scenario file without running it")
    p_val.add_argument("scenario", type=Path)

    p_rep = sub.add_parser("report", help="re-aggregate the results.csv in an output directory")
    p_rep.add_argument("out_dir", type=Path)
    p_rep.add_argument("--no-figures", action="store_true")
    return parser


def _cmd_run(args) -> int:
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    scenario = load_scenario(args.scenario)
    strategies = parse_strategies(args.strategy)
    trace_dir = args.out_dir / TRACE_DIR if args.trace else None
    result = run_matrix(scenario, strategies, args.seeds, jobs=args.jobs, trace_dir=trace_dir)
    write_outputs(result, args.out_dir)
    if not args.no_figures:
        render_figures(result.aggregate, args.out_dir, title=scenario.name)
    sys.stdout.write(aggregate_csv(result.aggregate))
    return EXIT_OK


def _cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    measuring = scenario.measuring_devices()
    print(
        f"ok: {scenario.name}: {len(scenario.devices)} devices ({len(measuring)} measuring), "
        f"{len(scenario.paths)} paths, {scenario.rounds} rounds, "
        f"strategies {','.join(s.value for s in scenario.strategies)}, {len(scenario.seeds)} seeds"
    )
    return EXIT_OK


def _cmd_report(args) -> int:
    result = reaggregate(args.out_dir)
    if not args.no_figures:
        render_figures(result.aggregate, args.out_dir, title=result.scenario)
    sys.stdout.write(aggregate_csv(result.aggregate))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"run": _cmd_run, "validate": _cmd_validate, "report": _cmd_report}[args.command]
    try:
        return handler(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
