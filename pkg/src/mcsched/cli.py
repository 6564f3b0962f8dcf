"""Command-line entry point: ``mcsched analyze`` and ``mcsched experiment``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, load_spec, load_system
from .harness import experiment_to_csv
from .model import validate
from .report import COLUMNS, analyze_system

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_UNSCHEDULABLE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mcsched", description="Schedulability analysis for partitioned multi-core systems.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="response times of one system description")
    a.add_argument("file", type=Path)
    a.add_argument("--strict", action="store_true", help="exit 3 when any analysis reports a miss")
    a.add_argument("--format", choices=("text", "csv"), default="text")

    e = sub.add_parser("experiment", help="Monte-Carlo schedulability sweep to CSV")
    e.add_argument("file", type=Path)
    e.add_argument("--out", type=Path, required=True)
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--seed", type=int, default=None, help="override the experiment file's base seed")
    return p


def _print_table(rows: list[list[str]]) -> None:
    table = [list(COLUMNS), *rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(COLUMNS) - 1)]
    for r in table:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)) + "  " + r[-1])


def cmd_analyze(args) -> int:
    system = load_system(args.file)
    problems = validate(system)
    if problems:
        for v in problems:
            print(f"{args.file}: {v.code} {v.subject}{': ' + v.detail if v.detail else ''}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rows = analyze_system(system)
    except ValueError as exc:
        print(f"{args.file}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cells = [r.cells() for r in rows]
    if args.format == "csv":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerows(cells)
    else:
        _print_table(cells)
        failed = sorted({r.analysis for r in rows if r.verdict != "ok"})
        print(f"\n{len(rows)} rows; " + (f"misses in: {', '.join(failed)}" if failed else "all schedulable"))
    if args.strict and any(r.verdict != "ok" for r in rows):
        return EXIT_UNSCHEDULABLE
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.jobs < 1:
        print("mcsched: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    spec = load_spec(args.file)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    log = logging.getLogger("mcsched")

    def progress(done: int, total: int) -> None:
        if done == total or done % max(total // 20, 1) == 0:
            log.info("%d/%d tasksets", done, total)

    rows = experiment_to_csv(spec, args.out, args.jobs, progress)
    log.info("wrote %d rows to %s", len(rows), args.out)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return cmd_analyze(args) if args.command == "analyze" else cmd_experiment(args)
    except ConfigError as exc:
        print(f"{args.file}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
