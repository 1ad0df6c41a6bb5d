"""Run mishbench experiments from JSON configs.

Exit codes: 0 success, 1 failed check, 2 config error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import ConfigError, load_config
from .data import DataFormatError, export_digits_idx
from .experiments import RUNNERS, CheckFailure, run_experiment

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("mishbench")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mishbench", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--output-dir", help="overrides config output_dir and $MISHBENCH_OUTPUT_DIR")
        sp.add_argument("--paper-scale", action="store_true", help="50 epochs, width 500, 23 runs")
        sp.add_argument("--seed-offset", type=int, default=0)
    sp = sub.add_parser("export-digits", help="write scikit-learn's digits as MNIST-named IDX files")
    sp.add_argument("directory")
    sp.add_argument("--test-fraction", type=float, default=0.25)
    sp.add_argument("--seed", type=int, default=0)
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "export-digits":
        try:
            print(json.dumps(export_digits_idx(args.directory, args.test_fraction, args.seed), indent=2))
        except OSError as exc:
            log.error("%s", exc)
            return EXIT_IO
        return EXIT_OK

    output_dir = args.output_dir or os.environ.get("MISHBENCH_OUTPUT_DIR")
    try:
        config = load_config(args.config, paper_scale=args.paper_scale,
                             seed_offset=args.seed_offset, output_dir=output_dir)
        if config.experiment != args.command:
            raise ConfigError(f"config is for {config.experiment!r} but {args.command!r} was requested")
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_IO

    try:
        result = run_experiment(config)
    except CheckFailure as exc:
        log.error("%s", exc)
        return EXIT_CHECK
    except (OSError, DataFormatError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    log.info("%s finished; outputs in %s", config.experiment, config.output_dir)
    if isinstance(result, dict):
        log.debug("%s", json.dumps(result, indent=2, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
