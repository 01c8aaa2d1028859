"""``histcode`` command line: one subcommand per pipeline stage, plus ``all``."""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ConfigError, HistCodeError, MissingUpstreamArtifact, NonFinite, NumericalDegeneracy
from .config import load_config
from .stages import COMMANDS, PIPELINE, configure_runtime, run_all

EXIT_OK = 0
EXIT_DATA = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="histcode", description=__doc__)
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, help="overrides the config file and HISTCODE_SEED")
    parser.add_argument("--workers", type=int, help="process count for per-slide work")
    det = parser.add_mutually_exclusive_group()
    det.add_argument("--deterministic", dest="deterministic", action="store_true", default=None)
    det.add_argument("--no-deterministic", dest="deterministic", action="store_false")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("command", choices=list(PIPELINE) + ["all"])
    return parser


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    if args.workers is not None:
        out["workers"] = str(args.workers)
    if args.deterministic is not None:
        out["deterministic"] = str(args.deterministic).lower()
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, overrides=_overrides(args))
        if args.command == "all":
            run_all(cfg)
        else:
            configure_runtime(cfg)
            COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"histcode: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingUpstreamArtifact as exc:
        print(f"histcode: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (NonFinite, NumericalDegeneracy) as exc:
        print(f"histcode: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except HistCodeError as exc:
        print(f"histcode: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
