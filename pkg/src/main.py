#!/usr/bin/env python3
"""
BSVIE representation toolkit - Main Entry Point
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, Optional

# Add the src directory to the path
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.config.experiment import ExperimentConfig
from src.config.settings import EXIT_CODES, LOGGING, VALIDATION
from src.experiments.runner import ExperimentRunner
from src.experiments.suites import suite_names
from src.model.catalog import catalog
from src.model.config_io import read_config_file
from src.model.problem import validate_problem
from src.utils.errors import BsvieError
from src.utils.io import write_table
from src.utils.logger import setup_logger

logger = logging.getLogger(__name__)

# suite-only runs still need a problem for the config hash
DEFAULT_PROBLEM = "diagonal-exponential"


def parse_arguments(argv=None):
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(description="Representation solvers and verifiers for backward "
                                                 "stochastic Volterra integral equations")
    parser.add_argument("command", choices=["run", "catalog", "validate"], help="What to do")
    parser.add_argument("--config", type=str, help="KEY=VALUE experiment config file")
    parser.add_argument("--suite", type=str, choices=suite_names(),
                        help="Verification suite to run")
    parser.add_argument("--problem", type=str, help="Catalog problem name (overrides the config)")
    parser.add_argument("--backend", type=str, choices=["fd", "picard", "kernel"], help="Representation solver")
    parser.add_argument("--refine", type=int, help="Number of time-step refinement levels")
    parser.add_argument("--out", type=str, help="Output directory")
    parser.add_argument("--seed", type=int, help="Random seed of the path ensembles")
    parser.add_argument("--threads", type=int, default=1, help="Worker threads for independent levels")
    parser.add_argument("--log-level", type=str, default=LOGGING["level"],
                        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
                        help="Set the logging level")
    return parser.parse_args(argv)


def _overrides(args) -> Dict[str, Optional[str]]:
    return {
        "PROBLEM": args.problem,
        "BACKEND": args.backend,
        "REFINE": None if args.refine is None else str(args.refine),
        "SEED": None if args.seed is None else str(args.seed),
        "SUITE": args.suite,
        "OUTPUT_DIR": args.out,
    }


def load_config(args) -> ExperimentConfig:
    """Config file (if any) with command line flags layered on top."""
    items = read_config_file(args.config) if args.config else {}
    overrides = _overrides(args)
    if "PROBLEM" not in items and overrides["PROBLEM"] is None and args.suite:
        overrides["PROBLEM"] = DEFAULT_PROBLEM
    return ExperimentConfig.from_items(items, overrides)


def run(args) -> int:
    config = load_config(args)
    runner = ExperimentRunner(config, threads=args.threads, output_dir=args.out)
    extra = {"command": "run"}

    if config.suite:
        outcome = runner.run_suite(config.suite)
        runner.write_outcome(outcome)
        extra["suite"] = config.suite
    if not config.suite or args.problem or args.refine:
        frame = runner.run_convergence()
        write_table(frame, runner.output_dir / "convergence.csv", runner.digest)
        print(frame[["level", "time_steps", "dt", "error", "observed_order", "fitted_order"]].to_string(index=False))
        extra["problem"] = config.build_problem().name

    runner.print_summary()
    status = runner.finish(extra)
    logger.info(f"Run finished with exit status {status} (artifacts in {runner.output_dir})")
    return status


def list_catalog(args) -> int:
    for entry in catalog():
        kind = entry.problem.kind
        print(f"{entry.name:<24} TYPE-{kind:<3} {entry.description}")
    return EXIT_CODES["pass"]


def validate(args) -> int:
    config = load_config(args)
    p = config.build_problem()
    report = validate_problem(p, sample_count=VALIDATION["sample_count"], seed=config.ensemble.seed,
                              horizon=config.grid.horizon)
    print(f"problem:            {p.name} (TYPE-{p.kind})")
    print(f"samples:            {report.sample_count}")
    print(f"max Lipschitz:      {report.max_lipschitz:.6g}")
    print(f"min ellipticity:    {report.min_ellipticity:.6g}")
    print(f"symmetric (t,s):    {report.symmetric_extension}")
    for key, value in sorted(report.lipschitz.items()):
        print(f"  {key:<16} {value:.6g}")
    for message in report.messages:
        print(f"! {message}")
    return EXIT_CODES["pass"] if report.passed else EXIT_CODES["verification_failure"]


COMMANDS = {"run": run, "catalog": list_catalog, "validate": validate}


def main(argv=None) -> int:
    """Main entry point: returns the process exit status."""
    args = parse_arguments(argv)
    setup_logger(args.log_level)

    try:
        return COMMANDS[args.command](args)
    except BsvieError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("Keyboard interrupt received")
        return EXIT_CODES["numerical_failure"]


if __name__ == "__main__":
    sys.exit(main())
