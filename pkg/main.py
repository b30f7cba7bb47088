#!/usr/bin/env python
"""
MeshLoc - mesh networking, UWB ranging and relative localization for MAV swarms.

Usage:
    python main.py run --scenario scenarios/five_node.json --seed 7 --out results/
    python main.py run --scenario scenarios/five_node.json --runs 20 --parallel 4
    python main.py validate --scenario my_scenario.json
    python main.py example > my_scenario.json

Exit codes: 0 success, 1 scenario validation failure, 2 runtime error.
"""

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional

from dotenv import load_dotenv

from config import MeshLocConfig
from src.errors import MeshLocError, ScenarioValidationError
from src.log import configure_logging
from src.report import FORMATS, write_report
from src.scenario import (
    ScenarioFile,
    apply_overrides,
    build_setup,
    example_scenario,
    load_scenario,
    scenario_warnings,
)
from src.simulator import Simulator

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


def run_one(scenario_json: str, seed: int, out_dir: str, fmt: str, suffix: str, log_level: str) -> List[str]:
    """Run one seed and write its artifacts. Runs in a worker process for --parallel."""
    configure_logging(log_level)
    scenario = apply_overrides(ScenarioFile.model_validate_json(scenario_json), seed=seed)
    report = Simulator(build_setup(scenario)).run()
    return write_report(report, out_dir, fmt, suffix)


def cmd_run(args, config: MeshLocConfig) -> int:
    scenario = load_scenario(args.scenario)
    scenario = apply_overrides(scenario, seed=args.seed, duration=args.duration)
    for warning in scenario_warnings(scenario):
        print(f"⚠ {warning}", file=sys.stderr)

    seeds = [scenario.seed + i for i in range(args.runs)]
    fmt = args.format or config.metrics_format
    out_dir = args.out or config.output_dir
    payload = scenario.model_dump_json()
    jobs = [
        (payload, seed, out_dir, fmt, f"_seed{seed}" if len(seeds) > 1 else "", config.log_level)
        for seed in seeds
    ]

    workers = args.parallel or config.workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, *zip(*jobs)))
    else:
        results = [run_one(*job) for job in jobs]

    for paths in results:
        for path in paths:
            print(f"✓ Wrote {path}", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args, config: MeshLocConfig) -> int:
    scenario = load_scenario(args.scenario)
    for warning in scenario_warnings(scenario):
        print(f"⚠ {warning}", file=sys.stderr)
    print(
        f"✓ {args.scenario} is valid ({len(scenario.nodes)} nodes, {len(scenario.topics)} topics)",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_example(args, config: MeshLocConfig) -> int:
    sys.stdout.write(example_scenario())
    return EXIT_OK


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Simulate Wi-Fi mesh + UWB ranging + relative localization for MAV swarms"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser("run", help="Run a scenario and write metrics")
    run_parser.add_argument("--scenario", required=True, help="Path to scenario JSON")
    run_parser.add_argument("--seed", type=int, help="Master seed (overrides the file)")
    run_parser.add_argument("--duration", type=float, help="Simulated seconds (overrides the file)")
    run_parser.add_argument("--out", help="Output directory (default: MESHLOC_OUT or results/)")
    run_parser.add_argument("--format", choices=FORMATS, help="Time-series format (default: csv)")
    run_parser.add_argument("--runs", type=_positive_int, default=1,
                            help="Number of consecutive seeds to run, starting at --seed")
    run_parser.add_argument("--parallel", type=_positive_int, help="Worker processes for multi-seed runs")
    run_parser.set_defaults(handler=cmd_run)

    validate_parser = subparsers.add_parser("validate", help="Check a scenario file")
    validate_parser.add_argument("--scenario", required=True, help="Path to scenario JSON")
    validate_parser.set_defaults(handler=cmd_validate)

    example_parser = subparsers.add_parser("example", help="Print a documented sample scenario")
    example_parser.set_defaults(handler=cmd_example)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for MeshLoc."""
    load_dotenv()
    config = MeshLocConfig.from_env()
    args = build_parser().parse_args(argv)

    try:
        configure_logging(config.log_level)
        return args.handler(args, config)
    except ScenarioValidationError as e:
        print(f"✗ Scenario invalid ({len(e.issues)} issue(s)):", file=sys.stderr)
        for issue in e.issues:
            print(f"  - {issue}", file=sys.stderr)
        return EXIT_INVALID
    except (MeshLocError, OSError) as e:
        print(f"✗ {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        print(f"✗ Unexpected error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
