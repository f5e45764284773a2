"""``polarsim`` command line: run a config file, run a named suite, print the version."""
from __future__ import annotations

import argparse
import sys

from . import __version__
from .errors import ConfigInvalid

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    from .suites import SUITES

    parser = _Parser(prog="polarsim", description="Opinion-dynamics polarization simulator.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_run = sub.add_parser("run", help="run the experiment described by a YAML config")
    p_run.add_argument("--config", required=True, help="path to the config file")
    p_run.add_argument("--out", help="output directory (overrides the config's outputs field)")
    p_run.add_argument("--workers", type=int, help="worker threads (capped by POLARSIM_THREADS)")

    p_suite = sub.add_parser("suite", help="run a named acceptance suite")
    p_suite.add_argument("name", help="one of: " + ", ".join(SUITES))
    p_suite.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p_suite.add_argument("--out", default=None, help="directory for CSV outputs and the report")
    p_suite.add_argument("--workers", type=int, help="worker threads (capped by POLARSIM_THREADS)")

    sub.add_parser("version", help="print the package version")
    return parser


def _cmd_run(args) -> int:
    from .config import load_config
    from .runner import run

    try:
        config = load_config(args.config)
    except FileNotFoundError:
        print(f"polarsim: config file not found: {args.config}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigInvalid as exc:
        print(f"polarsim: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    result = run(config, args.workers, args.out)
    for eps, agg in result.manifest["aggregate"].items():
        print(f"epsilon {eps}: {agg['converged']}/{config.replicas} converged "
              f"({agg['converged_fraction']:.4f})")
    print(f"outputs written to {result.out_dir}")
    return EXIT_PASS


def _cmd_suite(args) -> int:
    from .suites import SUITES, run_suite

    if args.name not in SUITES:
        print(f"polarsim: unknown suite {args.name!r}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return EXIT_USAGE
    report = run_suite(args.name, args.seed, args.out, args.workers)
    print(report.text())
    return EXIT_PASS if report.passed else EXIT_FAIL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "version":
        print(__version__)
        return EXIT_PASS
    if getattr(args, "workers", None) is not None and args.workers < 1:
        print("polarsim: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_suite(args)
    except OSError as exc:
        print(f"polarsim: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
