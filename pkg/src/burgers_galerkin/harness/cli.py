"""Command-line interface.

Exit codes: 0 every requested suite passed, 1 a suite failed, 2 invalid
configuration or arguments, 3 runtime or numerical error.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import BurgersGalerkinError, ValidationError
from .report import report
from .scenario import run_scenario

__all__ = ["main", "EXIT_OK", "EXIT_SUITE_FAILED", "EXIT_VALIDATION", "EXIT_RUNTIME"]

EXIT_OK, EXIT_SUITE_FAILED, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario JSON file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="results root directory (overrides output_dir)")
    common.add_argument("--threads", type=int, help="worker cap for ensemble runs")
    common.add_argument("--arithmetic", choices=("exact", "float"), help="coefficient arithmetic of identity suites")
    p = _Parser(prog="burgers-galerkin", description="Spectral Galerkin verification and simulation harness")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("run", parents=[common], help="run every stage the config requests")
    sub.add_parser("verify-operators", parents=[common], help="identity, model and generator suites")
    sub.add_parser("simulate", parents=[common], help="ensemble statistics and trajectory diagnostics")
    sub.add_parser("rates", parents=[common], help="rho_N approximation rate fits")
    sub.add_parser("resolvent", parents=[common], help="truncated resolvent equation")
    rp = sub.add_parser("report", parents=[common], help="summarize a results directory")
    rp.add_argument("results_dir", nargs="?", help="directory holding result files")
    return p


def _report(args) -> int:
    directory = args.results_dir or args.out
    if directory is None:
        raise ValidationError("report needs a results directory")
    try:
        rep = report(directory)
    except FileNotFoundError as exc:
        raise ValidationError(str(exc)) from None
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{len(rep.sections)} section(s) written to {directory}/summary.md")
    return EXIT_RUNTIME if rep.corrupt else EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "report":
            return _report(args)
        if args.config is None:
            raise ValidationError("--config is required")
        stages = None if args.command == "run" else [args.command]
        overrides = {"seed": args.seed, "out": args.out, "threads": args.threads, "arithmetic": args.arithmetic}
        res = run_scenario(args.config, stages, overrides)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BurgersGalerkinError, ArithmeticError, OSError, RuntimeError, MemoryError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for key, ok in res.suites.items():
        print(f"{'TREND' if ok is None else ('PASS' if ok else 'FAIL')} {key}")
    print(f"results: {res.out_dir}")
    if res.failed:
        print(f"failed: {', '.join(res.failed)}", file=sys.stderr)
        return EXIT_SUITE_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
