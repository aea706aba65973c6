"""Command line entry point: ``spatial-jsq <experiment-kind> --config <path>``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .config import KINDS, ConfigError, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIM = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spatial-jsq",
                                description="JSQ(d) load balancing experiments on bipartite graphs")
    p.add_argument("kind", choices=KINDS, help="experiment to run")
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--threads", type=int, help="worker threads for replications")
    p.add_argument("--no-plot", action="store_true", help="skip figure rendering")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.out is not None:
            overrides["out"] = args.out
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            overrides["seed"] = args.seed
        if args.threads is not None:
            overrides["threads"] = args.threads
        if args.no_plot:
            overrides["plot"] = False
        cfg = replace(cfg, **overrides).validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    from .experiments import run
    try:
        result = run(args.kind, cfg)
    except Exception as exc:  # anything past validation is a simulation failure
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM
    print(result.csv)
    for extra in result.extra_csv + result.figures:
        print(extra)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
