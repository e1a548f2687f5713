"""
Command line entry point.

    simulate <scenario.json>   reduced density, decoherence curves, observables
    compare  <scenario.json>   closed form vs oracle vs factorized report
    validate <matrices.json>   commutator residuals and recovered spectra
    limit    <scenario.json>   diagonal-ensemble value of every observable

Exit codes: 0 ok, 1 tolerance failure, 2 input error. Errors are printed as a
JSON object on stderr; logs also go to stderr, so stdout only carries reports.
"""

import argparse
import logging
import sys
from typing import Optional, Sequence

from src.config import settings
from src.errors import QNDError
from src.runner import ScenarioRunner, run_validate
from src.utils.artifact_writer import ArtifactWriter, dumps
from src.utils.scenario_loader import OUTPUT_FORMATS, load_matrices, load_scenario

logger = logging.getLogger(__name__)

FORMAT_CHOICES = {"csv": ("csv",), "json": ("json",), "both": OUTPUT_FORMATS}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qnd",
        description="Decoherence of finite quantum systems under nondestructive measurements",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="output directory (default: scenario or QND_OUTPUT_DIR)")
    common.add_argument("--format", choices=sorted(FORMAT_CHOICES), default=None,
                        help="artifact format (default: scenario setting, else both)")
    common.add_argument("--threads", type=int, default=None, help="worker threads over time chunks")
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "write reduced density, decoherence and observable series"),
        ("compare", "compare closed form, oracle and factorized evolution"),
        ("limit", "print the diagonal-ensemble limit of every observable"),
    ):
        cmd = sub.add_parser(name, parents=[common], help=help_text)
        cmd.add_argument("scenario", help="scenario JSON file")
    cmd = sub.add_parser("validate", parents=[common], help="check a matrix family for nondestructiveness")
    cmd.add_argument("matrices", help="matrix-mode JSON file")
    return parser


def configure_logging(quiet: bool = False):
    level = logging.WARNING if quiet else getattr(logging, settings.log_level, logging.INFO)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True)


def _writer(args, scenario=None) -> ArtifactWriter:
    out_dir = args.out
    if out_dir is None and scenario is not None:
        out_dir = scenario.output_dir
    if args.format is not None:
        formats = FORMAT_CHOICES[args.format]
    elif scenario is not None:
        formats = scenario.formats
    else:
        formats = OUTPUT_FORMATS
    return ArtifactWriter(out_dir, formats=formats)


def _threads(args) -> int:
    return args.threads if args.threads is not None else settings.threads


def run(args) -> int:
    if args.command == "validate":
        inputs = load_matrices(args.matrices)
        report, code = run_validate(inputs, writer=_writer(args))
        sys.stdout.write(dumps(report))
        return code

    scenario = load_scenario(args.scenario)
    if args.command == "limit":
        runner = ScenarioRunner(scenario)
        sys.stdout.write(dumps(runner.run_limit()))
        return 0

    runner = ScenarioRunner(scenario, writer=_writer(args, scenario), threads=_threads(args))
    if args.command == "simulate":
        return runner.run_simulate()
    report, code = runner.run_compare()
    sys.stdout.write(dumps(report))
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.quiet)
    if args.threads is not None and args.threads < 1:
        sys.stderr.write(dumps({"error": "ValidationError", "message": "--threads must be >= 1", "path": "--threads"}))
        return 2
    try:
        return run(args)
    except QNDError as exc:
        logger.error("%s", exc.message)
        sys.stderr.write(dumps(exc.to_dict()))
        return exc.exit_code
    finally:
        sys.stdout.flush()
        sys.stderr.flush()


if __name__ == "__main__":
    sys.exit(main())
