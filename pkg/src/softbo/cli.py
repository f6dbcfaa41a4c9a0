"""Command line: ``softbo run | table | plot | replay``.

Exit codes: 0 success, 2 configuration error, 3 partial failure (some cells
failed).  ``SOFTBO_WORKERS`` overrides the worker-pool size.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="softbo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run every (method, P, seed) cell of an experiment")
    r.add_argument("--config", help="YAML file of dotted keys")
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable, applied in order)")
    t = sub.add_parser("table", help="mean +/- std of best-so-far per checkpoint")
    t.add_argument("run_dir")
    g = sub.add_parser("plot", help="best-so-far and tip-speed SVG figures")
    g.add_argument("run_dir")
    y = sub.add_parser("replay", help="re-simulate a cell's best policy to a trajectory CSV")
    y.add_argument("run_dir")
    y.add_argument("--cell", required=True, help="cell id, e.g. bo-lei_P2_s0")
    y.add_argument("--out", help="output CSV path")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            from .runner import run, worker_count

            cfg = load_config(args.config, args.override)
            run_dir, failed = run(cfg, workers=worker_count())
            print(f"run directory: {run_dir}")
            if failed:
                print(f"{len(failed)} cells failed: {', '.join(failed)}", file=sys.stderr)
                return EXIT_PARTIAL
            return EXIT_OK
        if args.command == "table":
            from .report import table

            t, text = table(args.run_dir)
            print(text, end="")
            expected = len(t.methods) * len(t.budgets) * len(t.P_values)
            return EXIT_OK if len(t.cells) == expected else EXIT_PARTIAL
        if args.command == "plot":
            from .report import plot

            for path in plot(args.run_dir):
                print(path)
            return EXIT_OK
        if args.command == "replay":
            from .runner import replay

            print(replay(args.run_dir, args.cell, args.out))
            return EXIT_OK
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
