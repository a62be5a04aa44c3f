"""Command-line entry point.

    perfcost <kind> --config path [--seed-offset N] [--out dir] [--threads N]
    perfcost report --in dir
"""

import argparse
import logging
import sys

from perfcost.errors import ConfigError, ReportError
from perfcost.harness.config import KINDS, load_config
from perfcost.harness.report import emit_report
from perfcost.harness.runner import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, run_experiment


def _parser():
    p = argparse.ArgumentParser(prog="perfcost", description="Strategic cost inference experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        s = sub.add_parser(kind, help=f"run the {kind} experiment")
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--seed-offset", type=int, default=None, help="added to every configured seed")
        s.add_argument("--out", default=None, help="output directory (overrides the config)")
        s.add_argument("--threads", type=int, default=None, help="worker processes")
    r = sub.add_parser("report", help="summarize a results directory")
    r.add_argument("--in", dest="indir", required=True)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "report":
        try:
            print(emit_report(args.indir))
        except ReportError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK

    try:
        cfg = load_config(args.config)
        if cfg.kind != args.command:
            raise ConfigError(f"config kind {cfg.kind!r} does not match command {args.command!r}")
        if args.seed_offset is not None:
            cfg.seed_offset = args.seed_offset
        if args.threads is not None:
            cfg.threads = args.threads
        cfg.validate()
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        status = run_experiment(cfg, out_dir=args.out)
    except Exception as e:
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    if status == EXIT_RUNTIME:
        print("some replications failed; see errors.json", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
