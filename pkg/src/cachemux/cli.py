"""Command-line entry point.

    cachemux run <scenario.yaml> [--seed N] [--repetitions K] [--out DIR]
    cachemux compare <run_dir> <run_dir> [...]
    cachemux capacity <scenario.yaml>
    cachemux route <run_state.json> <get|set> <key> [--client N]

Exit codes: 0 ok, 2 configuration error, 3 I/O error."""

from __future__ import annotations

import argparse
import json
import sys

from .expctl import (EXIT_CONFIG, EXIT_IO, EXIT_OK, capacity_probe, compare_runs,
                     load_scenario, route_query, run_scenario)
from .topology import ConfigError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cachemux",
                                     description="distributed-cache middleware workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario across its seeds")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, default=None,
                       help="run only this seed (overrides the scenario list)")
    p_run.add_argument("--repetitions", type=int, default=None,
                       help="run seeds 1..K, overriding the scenario list")
    p_run.add_argument("--out", default="runs", help="output directory (default: runs)")

    p_cmp = sub.add_parser("compare", help="side-by-side phase summaries")
    p_cmp.add_argument("run_dirs", nargs="+", help="seed run directories")
    p_cmp.add_argument("--csv", default=None, help="also write the table as CSV")

    p_cap = sub.add_parser("capacity", help="probe the maximum sustainable rate")
    p_cap.add_argument("scenario")
    p_cap.add_argument("--verbose", action="store_true")

    p_route = sub.add_parser("route", help="admin route query against saved run state")
    p_route.add_argument("run_state")
    p_route.add_argument("op", choices=("get", "set"))
    p_route.add_argument("key")
    p_route.add_argument("--client", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            scenario = load_scenario(args.scenario)
            seeds = None
            if args.seed is not None:
                seeds = [args.seed]
            elif args.repetitions is not None:
                seeds = list(range(1, args.repetitions + 1))
            run_scenario(scenario, out_dir=args.out, seeds=seeds)
            return EXIT_OK
        if args.command == "compare":
            csv_text, table = compare_runs(args.run_dirs)
            print(table, end="")
            if args.csv:
                with open(args.csv, "w", encoding="utf-8") as fh:
                    fh.write(csv_text)
            return EXIT_OK
        if args.command == "capacity":
            scenario = load_scenario(args.scenario)
            report = capacity_probe(scenario, verbose=args.verbose)
            print(json.dumps({"max_rate": report["max_rate"],
                              "points": len(report["trace"])}, indent=2))
            return EXIT_OK
        if args.command == "route":
            report = route_query(args.run_state, args.op, args.key, args.client)
            print(json.dumps(report, indent=2, sort_keys=True))
            return EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IOError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
