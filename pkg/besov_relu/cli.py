"""Command-line interface for besov-relu package."""

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from besov_relu import __version__
from besov_relu.bench import (
    ExperimentConfig,
    ExperimentKind,
    ExperimentResult,
    check_thresholds,
    run_experiment,
)
from besov_relu.bspline import convolution_error, partition_of_unity_error
from besov_relu.exceptions import (
    AcceptanceError,
    BesovReluError,
    ConfigError,
    ExperimentInterrupted,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INVALID = 2
EXIT_ACCEPTANCE = 3
EXIT_INTERRUPTED = 130

PARTITION_TOLERANCE = 1e-10
CONVOLUTION_TOLERANCE = 1e-6


def configure_logging(verbosity: int) -> None:
    """Send log records to stderr: WARNING by default, INFO with -v, DEBUG with -vv."""
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )


def load_config(args: argparse.Namespace, kind: ExperimentKind) -> ExperimentConfig:
    """Read the config file, fill in the subcommand's kind and apply flag overrides.

    Raises:
        ConfigError: If the file is unreadable, invalid or of another kind.
    """
    try:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError("config", f"cannot read {args.config}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be an object")
    data.setdefault("kind", kind.value)
    cfg = ExperimentConfig.from_dict(data)
    if cfg.kind is not kind:
        raise ConfigError("kind", f"config is {cfg.kind.value}, command expects {kind.value}")
    return cfg.with_overrides(seed_base=args.seed_base, out=args.out, threads=args.threads)


def print_summary(cfg: ExperimentConfig, result: ExperimentResult) -> None:
    """Print the fitted slopes next to the reference exponents.

    Args:
        cfg: The experiment that ran.
        result: Its rows and summary.
    """
    summary = result.summary
    print(f"Experiment: {cfg.kind.value} ({summary['config_hash'][:12]})")
    print(f"Target: {cfg.target}, grid {list(cfg.grid)}, {len(cfg.seeds)} seed(s)")
    print(f"Rows: {summary['rows']}")
    print()
    for method, entry in summary["methods"].items():
        slope = "n/a" if entry["slope"] is None else f"{entry['slope']:+.3f}"
        reference = entry["reference"]
        expected = "" if reference is None else f"  (reference {reference['exponent']:+.3f})"
        fit = entry["median_fit"]
        pooled = "" if fit is None else f", fit of medians {fit['slope']:+.3f}"
        print(f"  {method:<14} median slope {slope}{pooled}{expected}")
        if entry["truncated_rows"]:
            print(f"  {'':<14} {entry['truncated_rows']} row(s) with the tail cut below K*")
    if "certificate" in summary:
        certificate = summary["certificate"]
        print()
        print(f"Network: {certificate['size']}")
        print(
            f"Observed error {certificate['observed_error']:.3g}"
            f" <= bound {certificate['error_bound']:.3g}"
        )
        print(f"Unit certificate passed: {certificate['unit']['passed']}")
    if cfg.out:
        print()
        print(f"Wrote {cfg.out}")


def _assert_acceptance(cfg: ExperimentConfig, summary: dict[str, Any]) -> None:
    failures = check_thresholds(cfg, summary)
    certificate = summary.get("certificate")
    if certificate is not None and not certificate["unit"]["passed"]:
        failures.append("unit certificate failed")
    if failures:
        raise AcceptanceError("; ".join(failures))


def cmd_experiment(args: argparse.Namespace, kind: ExperimentKind) -> int:
    """Handle the experiment commands: approx-rate, estimate-rate and compile-verify.

    Args:
        args: Parsed command-line arguments.
        kind: Experiment kind selected by the subcommand.

    Returns:
        Exit code (0 success, 2 invalid input, 3 failed acceptance check).
    """
    try:
        cfg = load_config(args, kind)
        result = run_experiment(cfg)
        if args.json:
            print(json.dumps(result.summary, indent=2))
        else:
            print_summary(cfg, result)
        if args.check:
            _assert_acceptance(cfg, result.summary)
        return EXIT_OK

    except AcceptanceError as e:
        print(f"Acceptance failed: {e}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    except ExperimentInterrupted as e:
        print(f"Interrupted: {e}", file=sys.stderr)
        return EXIT_INTERRUPTED
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except BesovReluError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_ERROR


def cmd_spline_check(args: argparse.Namespace) -> int:
    """Handle 'spline-check' command - partition of unity and convolution identity.

    Args:
        args: Parsed command-line arguments.

    Returns:
        Exit code (0 for success, 3 if a property fails in assert mode).
    """
    results = []
    try:
        for m in args.orders:
            partition = partition_of_unity_error(m, samples=args.samples, seed=args.seed_base + m)
            convolution = convolution_error(m) if m >= 1 else 0.0
            results.append(
                {
                    "m": m,
                    "partition_of_unity": partition,
                    "convolution": convolution,
                    "passed": partition <= PARTITION_TOLERANCE
                    and convolution <= CONVOLUTION_TOLERANCE,
                }
            )
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID

    if args.json:
        print(json.dumps(results, indent=2))
    else:
        print("Cardinal B-spline properties:")
        print()
        for entry in results:
            mark = "ok" if entry["passed"] else "FAIL"
            print(
                f"  m={entry['m']}: partition of unity {entry['partition_of_unity']:.2e},"
                f" convolution {entry['convolution']:.2e}  [{mark}]"
            )
    if args.check and not all(entry["passed"] for entry in results):
        print("Acceptance failed: spline property out of tolerance", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with all subcommands."""
    parser = argparse.ArgumentParser(
        prog="besov-relu",
        description="Approximation and estimation rate experiments for B-spline ReLU networks",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  besov-relu approx-rate --config approx.json --out approx.csv
  besov-relu estimate-rate --config estimate.json --threads 4 --assert
  besov-relu compile-verify --config compile.json --json
  besov-relu spline-check --orders 1 2 3
        """,
    )

    parser.add_argument(
        "--version",
        action="version",
        version=f"%(prog)s {__version__}",
        help="Show version information",
    )

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # Common arguments for all commands
    common_parser = argparse.ArgumentParser(add_help=False)
    common_parser.add_argument(
        "--seed-base",
        type=int,
        default=None,
        help="Offset added to every seed (overrides the config)",
    )
    common_parser.add_argument(
        "--json",
        action="store_true",
        help="Print the summary as JSON",
    )
    common_parser.add_argument(
        "--assert",
        dest="check",
        action="store_true",
        help="Exit with code 3 when an acceptance threshold fails",
    )
    common_parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="Increase log verbosity (-v info, -vv debug)",
    )

    # Arguments shared by the experiment commands
    experiment_parser = argparse.ArgumentParser(add_help=False)
    experiment_parser.add_argument(
        "--config",
        required=True,
        help="Experiment config JSON (schema 1)",
    )
    experiment_parser.add_argument(
        "--out",
        default=None,
        help="CSV output path; summary and artifacts are written next to it",
    )
    experiment_parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="Worker threads (overrides the config)",
    )

    commands = {
        "approx-rate": (
            ExperimentKind.APPROX_RATE,
            "Measure N-term approximation error against the term budget",
        ),
        "estimate-rate": (
            ExperimentKind.ESTIMATE_RATE,
            "Measure regression risk of the adaptive and kernel estimators against n",
        ),
        "compile-verify": (
            ExperimentKind.COMPILE_VERIFY,
            "Compile adaptive expansions into ReLU networks and verify their error",
        ),
    }
    for name, (kind, description) in commands.items():
        sub = subparsers.add_parser(
            name,
            parents=[common_parser, experiment_parser],
            help=description,
            description=description + ".",
        )
        sub.set_defaults(kind=kind)

    parser_spline = subparsers.add_parser(
        "spline-check",
        parents=[common_parser],
        help="Check cardinal B-spline identities",
        description="Check the partition of unity and the convolution identity of N_m.",
    )
    parser_spline.add_argument(
        "--orders",
        type=int,
        nargs="+",
        default=[1, 2, 3, 4],
        help="Spline orders to check (default: 1 2 3 4)",
    )
    parser_spline.add_argument(
        "--samples",
        type=int,
        default=1000,
        help="Random points for the partition of unity (default: 1000)",
    )
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Main CLI entry point.

    Returns:
        Exit code.
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    # Show help if no command specified
    if not args.command:
        parser.print_help()
        return EXIT_OK

    configure_logging(args.verbose)
    if args.command == "spline-check":
        if args.seed_base is None:
            args.seed_base = 0
        return cmd_spline_check(args)
    return cmd_experiment(args, args.kind)


if __name__ == "__main__":
    sys.exit(main())
