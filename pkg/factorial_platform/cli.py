"""
Command-line interface.

Usage:
    factorial analyze --summary table3.csv --factors R,G,I
    factorial power-curve --summary table3.csv --factors R,G,I \\
        --effects R=0.1875,G=0.1042,GxI=0.1042 --n-grid 16:1600:8

Exit codes: 0 success, 2 input error, 3 statistical degeneracy, 4 infeasible request.
"""

import argparse
import logging
import sys
import warnings
from typing import Any, Dict, List, Optional

from . import __version__
from .commands import COMMANDS
from .config import resolve_config
from .dataio import write_csv, write_json
from .errors import FactorialError

logger = logging.getLogger("factorial_platform")

# Flags whose destination differs from the RunConfig field name.
_RENAMED = {"estimand": "estimands"}


def _common_options() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    data = parser.add_argument_group("data")
    data.add_argument("--input", help="Unit-level CSV (factor columns or 'treatment', plus 'y')")
    data.add_argument("--summary", help="Per-treatment counts: CSV (treatment,n,n1) or analyze JSON")
    data.add_argument("--population", help="Science table CSV, one 0/1 column per treatment")
    data.add_argument("--factors", help="Comma-separated factor names, first factor most significant")
    data.add_argument("--config", help="JSON config file; CLI flags override its keys")

    inference = parser.add_argument_group("inference")
    inference.add_argument("--alpha", type=float, help="Level of tests and intervals (default 0.05)")
    inference.add_argument("--alternative", choices=["two-sided", "greater", "less"])
    inference.add_argument("--correction", choices=["ier", "bonferroni"])
    inference.add_argument(
        "--estimand", action="append", choices=["linear", "logfe", "logitfe"],
        help="Estimand to report; repeat for several (linear is always included)",
    )
    inference.add_argument("--haldane", action="store_true", default=None,
                           help="Add 0.5 to success and failure counts for logFE/logitFE")
    inference.add_argument("--family", help="Comma-separated effects forming the tested family")
    inference.add_argument("--clip", action="store_true", default=None,
                           help="Clip interval endpoints to [-1, 1]")

    planning = parser.add_argument_group("planning")
    planning.add_argument("--criterion", choices=["d", "a", "e"], help="Allocation rule (d = balanced)")
    planning.add_argument("--effects", help="Effect sizes to detect, e.g. R=0.1875,GxI=0.1042")
    planning.add_argument("--tau-star", type=float, help="Effect size for sample-size")
    planning.add_argument("--target-power", type=float, help="Target (joint) power (default 0.8)")
    planning.add_argument("--n-grid", help="Grid of total N: start:stop:step or a comma list")
    planning.add_argument("--n", type=int, help="Total number of units")
    planning.add_argument("--proportions", help="Comma-separated guessed proportions P_j")
    planning.add_argument("--pilot-arm-size", type=int, help="Units per arm of the pilot behind --proportions")
    planning.add_argument("--groups", type=int, help="Bonferroni family size G (default J-1)")

    simulation = parser.add_argument_group("simulation")
    simulation.add_argument("--seed", type=int, help="Random seed")
    simulation.add_argument("--draws", type=int, help="Assignments drawn per population")
    simulation.add_argument("--populations", type=int, help="Permuted populations per N")
    simulation.add_argument("--workers", type=int, help="Worker threads")
    simulation.add_argument("--enumeration-cap", type=int, help="Largest number of assignments to enumerate")

    output = parser.add_argument_group("output")
    output.add_argument("--json-out", help="Write the machine-readable result to this path")
    output.add_argument("--csv-out", help="Write the result table to this path")
    output.add_argument("--verbose", "-v", action="store_true", help="Log progress at INFO level")
    return parser


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="factorial",
        description="Design and analysis of 2^K factorial experiments with binary outcomes",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True
    descriptions = {
        "analyze": "Estimate factorial effects with Neymanian intervals and p-values",
        "plot-data": "Emit main-effect and interaction plot points",
        "power-curve": "Analytic power over a grid of sample sizes",
        "sample-size": "Conservative sample size for a one-sided test",
        "allocate": "D/A/E-optimal allocation of N units",
        "simulate": "Finite-population Monte Carlo power and coverage",
        "enumerate": "Exact randomization distribution of a small science table",
    }
    for name, description in descriptions.items():
        subparsers.add_parser(name, parents=[common], help=description, description=description)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    skip = {"command", "config", "verbose"}
    values = {}
    for key, value in vars(args).items():
        if key in skip or value is None:
            continue
        values[_RENAMED.get(key, key)] = value
    return values


def configure_logging(level: str, verbose: bool = False) -> None:
    if verbose:
        level = "INFO" if logging.getLevelName(level.upper()) > logging.INFO else level
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level.upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logging.captureWarnings(True)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(_overrides(args), args.config)
        configure_logging(config.log_level, args.verbose)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            result = COMMANDS[args.command](config)
        print(result.text)
        if config.json_out:
            write_json(result.payload, config.json_out)
        if config.csv_out:
            write_csv(result.table, config.csv_out)
    except FactorialError as exc:
        logger.debug("Command %s failed", args.command, exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
