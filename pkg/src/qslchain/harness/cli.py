"""qslchain {simulate, optimize, scan, filter, report}."""
from __future__ import annotations

import argparse
import logging
import sys

from ..krotov import DivergenceError
from .config import BaselineSection, ConfigError, RunConfig, load_config
from .runs import (MissingInputError, cmd_filter, cmd_optimize, cmd_report, cmd_scan,
                   cmd_simulate)

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qslchain",
                                description="Optimal excitation transfer along a spin chain.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="YAML run configuration (defaults if omitted)")
        sp.add_argument("--out", help="output directory (overrides outputs.directory)")
        return sp

    add("simulate", "propagate the baseline pulse")
    sp = add("optimize", "run Krotov from the baseline or a stored pulse")
    sp.add_argument("--pulse", help="resume from this pulse file")
    sp = add("scan", "minimum-time scan over chain lengths")
    sp.add_argument("--workers", type=int, default=1)
    sp = add("filter", "low-pass a pulse and re-simulate it")
    sp.add_argument("--pulse", required=True)
    sp.add_argument("--nu-max", type=float, nargs="+", required=True,
                    help="cutoff(s) in units of J; the last one is written out")
    sp = sub.add_parser("report", help="summarise a result directory")
    sp.add_argument("directory")
    sp.add_argument("--out", help="report file (default DIRECTORY/report.csv)")
    return p


def _config(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            print(cmd_report(args.directory, args.out))
            return EXIT_OK
        run = _config(args.config)
        if args.command == "simulate":
            b = cmd_simulate(run, args.out)
        elif args.command == "optimize":
            if args.pulse:
                # the stored pulse becomes the seed, and is echoed as such
                run = RunConfig(chain=run.chain, baseline=BaselineSection(pulse_file=args.pulse),
                                krotov=run.krotov, scan=run.scan, outputs=run.outputs)
            b = cmd_optimize(run, args.out)
        elif args.command == "scan":
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            b = cmd_scan(run, args.out, workers=args.workers)
        else:
            b = cmd_filter(run, args.pulse, args.nu_max, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (MissingInputError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    for key, val in b.summary.items():
        if key not in ("result", "records"):
            print(f"{key}: {val}")
    print(f"run {b.run_id} -> {b.out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
