"""Command line entry point.

    reconwatch scan -k email=someone@example.org -m or -u https://gist.github.com/
    reconwatch guided
    reconwatch history list

Exit codes: 0 success, 1 usage error, 2 runtime or network error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

from .pipeline import HISTORY_FILE, RuntimeConfig, SessionError, SessionOutcome, run_session
from .session import (
    GuidedAborted,
    HistoryError,
    HistoryRecord,
    UsageError,
    add_scan_arguments,
    append_history,
    read_history,
    reconwatch_home,
    run_guided,
    spec_from_args,
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_float(value: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{value!r} is not a number") from None
    if x < 0:
        raise argparse.ArgumentTypeError("must not be negative")
    return x


def _add_runtime_arguments(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("runtime")
    g.add_argument("--proxy", metavar="HOST:PORT",
                   help="SOCKS5 proxy for onion targets (default $RECONWATCH_PROXY or 127.0.0.1:9050)")
    g.add_argument("--db-dir", type=Path, help="directory holding mitre.json and cve.json")
    g.add_argument("--delay", type=_positive_float, help="seconds between requests to one host (default 1.0)")
    g.add_argument("--pool-size", type=int, help="concurrent fetchers (default 8)")
    g.add_argument("--timeout", type=_positive_float, help="per-request timeout in seconds (default 30)")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reconwatch", description="Keyword threat-intelligence scan of surface and onion sites.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    scan = sub.add_parser("scan", help="run a scan from single-line flags")
    add_scan_arguments(scan)
    _add_runtime_arguments(scan)

    guided = sub.add_parser("guided", help="build a scan step by step")
    guided.add_argument("-o", "--out", default=None, metavar="PATH", help="report output path")
    _add_runtime_arguments(guided)

    hist = sub.add_parser("history", help="inspect past sessions")
    hist_sub = hist.add_subparsers(dest="history_command", required=True, parser_class=_Parser)
    hist_sub.add_parser("list", help="list recorded sessions")
    return parser


def _config(args) -> RuntimeConfig:
    if args.pool_size is not None and args.pool_size < 1:
        raise UsageError("--pool-size must be at least 1")
    return RuntimeConfig.from_env(
        proxy=args.proxy,
        db_dir=args.db_dir,
        per_host_delay=args.delay,
        pool_size=args.pool_size,
        timeout=args.timeout,
        report_path=Path(args.out) if args.out else None,
    )


def _print_outcome(outcome: SessionOutcome, out=None) -> None:
    out = out or sys.stdout
    s = outcome.summary
    print(f"session {s.spec.session_id}: {s.pages_scanned} pages scanned, "
          f"{s.pages_matched} matched, {s.pages_errored} errored", file=out)
    for m in s.matches:
        print(f"  match  {m.url}  [{', '.join(m.matched_values)}]", file=out)
    for f in s.findings:
        print(f"  {f.source:<5}  {f.id}  {f.name}", file=out)
    for w in outcome.warnings:
        print(f"  warn   {w}", file=out)
    if outcome.report_path:
        print(f"report written to {outcome.report_path}", file=out)


def _history_list(out=None) -> int:
    out = out or sys.stdout
    path = reconwatch_home() / HISTORY_FILE
    try:
        records = read_history(path)
    except HistoryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if not records:
        print(f"no sessions recorded in {path}", file=out)
    for r in records:
        kws = "; ".join(f"{k.kind}={k.value}" for k in r.spec.keywords)
        print(f"{r.spec.session_id}  {r.outcome:<9}  {r.pages_matched}/{r.pages_scanned}  "
              f"{r.spec.combine}  {kws}  -> {', '.join(r.spec.targets)}", file=out)
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "history":
            return _history_list()
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        config = _config(args)
        if args.command == "scan":
            spec = spec_from_args(args)
        else:
            try:
                spec = run_guided()
            except GuidedAborted as exc:
                if exc.spec is not None:
                    append_history(HistoryRecord(exc.spec, "aborted"), config.home_dir / HISTORY_FILE)
                print("aborted", file=sys.stderr)
                return EXIT_USAGE
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"reconwatch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HistoryError as exc:
        print(f"reconwatch: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    try:
        outcome = run_session(spec, config)
    except SessionError as exc:
        print(f"reconwatch: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("aborted", file=sys.stderr)
        return EXIT_RUNTIME
    _print_outcome(outcome)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
