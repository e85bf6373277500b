"""Search specifications, the two input modes, and the history store."""
from __future__ import annotations

import argparse
import json
import os
import secrets
import sys
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, TextIO
from urllib.parse import urlsplit

from .gateway import classify_target

KINDS = ("name", "email", "text")
COMBINE_MODES = ("AND", "OR")
OUTCOMES = ("completed", "aborted", "errored")
DEFAULT_MAX_PAGES = 100
DEFAULT_MAX_DEPTH = 2
HOME_ENV = "RECONWATCH_HOME"

BANNER = r"""
  ____                         __        __    _       _
 |  _ \ ___  ___ ___  _ __     \ \      / /_ _| |_ ___| |__
 | |_) / _ \/ __/ _ \| '_ \     \ \ /\ / / _` | __/ __| '_ \
 |  _ <  __/ (_| (_) | | | |     \ V  V / (_| | || (__| | | |
 |_| \_\___|\___\___/|_| |_|      \_/\_/ \__,_|\__\___|_| |_|
        keyword threat intelligence for surface and onion sites
"""


class SpecError(ValueError):
    """Invalid search input. Carries a message meant for the user."""


class UsageError(SpecError):
    pass


class HistoryError(RuntimeError):
    pass


class GuidedAborted(Exception):
    def __init__(self, spec: Optional["SearchSpec"] = None):
        super().__init__("aborted by user")
        self.spec = spec


def reconwatch_home() -> Path:
    return Path(os.environ.get(HOME_ENV) or os.getcwd())


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def new_session_id(now: Optional[datetime] = None) -> str:
    now = now or utcnow()
    return now.astimezone(timezone.utc).strftime("%Y%m%dT%H%M%S") + "-" + secrets.token_hex(3)


@dataclass(frozen=True)
class TypedKeyword:
    kind: str
    value: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown keyword kind {self.kind!r} (expected one of {', '.join(KINDS)})")
        value = self.value.strip() if isinstance(self.value, str) else ""
        if not value:
            raise SpecError("keyword value must not be empty")
        if self.kind == "email":
            local, at, domain = value.partition("@")
            if not at or not local or not domain or "@" in domain:
                raise SpecError(f"{value!r} is not an email address")
        object.__setattr__(self, "value", value)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value}


def parse_keyword(token: str) -> TypedKeyword:
    """Parse ``kind=value``."""
    kind, sep, value = token.partition("=")
    if not sep:
        raise SpecError(f"malformed keyword {token!r}, expected kind=value")
    return TypedKeyword(kind.strip().lower(), value)


def check_target(url: str) -> str:
    url = url.strip()
    parts = urlsplit(url)
    if parts.scheme not in ("http", "https") or not parts.hostname:
        raise SpecError(f"{url!r} is not an absolute http/https URL")
    try:
        classify_target(url)
    except ValueError as exc:
        raise SpecError(str(exc)) from None
    return url


@dataclass(frozen=True)
class SearchSpec:
    session_id: str
    created_at: datetime
    keywords: tuple[TypedKeyword, ...]
    combine: str
    targets: tuple[str, ...]
    max_pages: int = DEFAULT_MAX_PAGES
    max_depth: int = DEFAULT_MAX_DEPTH

    def __post_init__(self):
        object.__setattr__(self, "keywords", tuple(self.keywords))
        object.__setattr__(self, "targets", tuple(check_target(t) for t in self.targets))
        object.__setattr__(self, "combine", str(self.combine).upper())
        if not self.session_id:
            raise SpecError("session id must not be empty")
        if not self.keywords:
            raise SpecError("at least one keyword required")
        if not self.targets:
            raise SpecError("at least one target URL required")
        if self.combine not in COMBINE_MODES:
            raise SpecError(f"combine mode must be and/or, got {self.combine!r}")
        if isinstance(self.max_pages, bool) or not isinstance(self.max_pages, int) or self.max_pages < 1:
            raise SpecError("max pages must be a positive integer")
        if isinstance(self.max_depth, bool) or not isinstance(self.max_depth, int) or self.max_depth < 0:
            raise SpecError("max depth must be a non-negative integer")
        if self.created_at.tzinfo is None:
            raise SpecError("created_at must be timezone-aware")

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "created_at": self.created_at.isoformat(),
            "keywords": [k.to_dict() for k in self.keywords],
            "combine": self.combine,
            "targets": list(self.targets),
            "max_pages": self.max_pages,
            "max_depth": self.max_depth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpec":
        return cls(
            session_id=d["session_id"],
            created_at=datetime.fromisoformat(d["created_at"]),
            keywords=tuple(TypedKeyword(k["kind"], k["value"]) for k in d["keywords"]),
            combine=d["combine"],
            targets=tuple(d["targets"]),
            max_pages=d["max_pages"],
            max_depth=d["max_depth"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)


def build_spec(
    keywords,
    combine: Optional[str],
    targets,
    max_pages: int = DEFAULT_MAX_PAGES,
    max_depth: int = DEFAULT_MAX_DEPTH,
    session_id: Optional[str] = None,
    created_at: Optional[datetime] = None,
) -> SearchSpec:
    created_at = created_at or utcnow()
    return SearchSpec(
        session_id=session_id or new_session_id(created_at),
        created_at=created_at,
        keywords=tuple(keywords),
        combine=(combine or "OR").upper(),
        targets=tuple(targets),
        max_pages=max_pages,
        max_depth=max_depth,
    )


# -- commando mode -----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive(value: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{value!r} is not an integer") from None
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def _non_negative(value: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{value!r} is not an integer") from None
    if n < 0:
        raise argparse.ArgumentTypeError("must be 0 or more")
    return n


def add_scan_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-k", "--keyword", action="append", default=[], metavar="KIND=VALUE",
                        help="keyword to search for; kind is name, email or text (repeatable)")
    parser.add_argument("-m", "--mode", type=str.lower, choices=["and", "or"], default="or",
                        help="require all keywords (and) or any keyword (or) on a page")
    parser.add_argument("-u", "--url", action="append", default=[], metavar="URL",
                        help="target URL to crawl (repeatable)")
    parser.add_argument("--max-pages", type=_positive, default=DEFAULT_MAX_PAGES)
    parser.add_argument("--max-depth", type=_non_negative, default=DEFAULT_MAX_DEPTH)
    parser.add_argument("-o", "--out", default=None, metavar="PATH", help="report output path")


def spec_from_args(args: argparse.Namespace, session_id=None, created_at=None) -> SearchSpec:
    if not args.keyword:
        raise UsageError("at least one keyword required (-k kind=value)")
    if not args.url:
        raise UsageError("at least one target URL required (-u URL)")
    try:
        keywords = [parse_keyword(k) for k in args.keyword]
        return build_spec(keywords, args.mode, args.url, args.max_pages, args.max_depth,
                          session_id=session_id, created_at=created_at)
    except SpecError as exc:
        raise UsageError(str(exc)) from None


def run_commando(argv: list[str], session_id=None, created_at=None) -> SearchSpec:
    """Build a spec from single-line flags, e.g. ``scan -k email=a@b.org -u https://x/``."""
    argv = list(argv)
    if argv and argv[0] == "scan":
        argv = argv[1:]
    parser = _Parser(prog="reconwatch scan", add_help=False)
    add_scan_arguments(parser)
    return spec_from_args(parser.parse_args(argv), session_id, created_at)


# -- guided mode -------------------------------------------------------------

def run_guided(
    input_fn: Optional[Callable[[str], str]] = None,
    out: Optional[TextIO] = None,
    session_id: Optional[str] = None,
    created_at: Optional[datetime] = None,
) -> SearchSpec:
    input_fn = input_fn or input
    out = out or sys.stdout

    def say(msg: str) -> None:
        print(msg, file=out)

    def ask(prompt: str) -> str:
        try:
            return input_fn(prompt).strip()
        except (EOFError, KeyboardInterrupt):
            raise GuidedAborted() from None

    say(BANNER)
    keywords: list[TypedKeyword] = []
    while True:
        kind = ask("Keyword type [name/email/text] (blank when done): ").lower()
        if not kind:
            if keywords:
                break
            say("! at least one keyword required")
            continue
        if kind not in KINDS:
            say(f"! unknown type {kind!r}, choose name, email or text")
            continue
        while True:
            try:
                keywords.append(TypedKeyword(kind, ask(f"{kind.capitalize()} value: ")))
                break
            except SpecError as exc:
                say(f"! {exc}")

    while True:
        mode = ask("Combine mode [and/or] (default or): ").lower() or "or"
        if mode in ("and", "or"):
            break
        say("! enter and or or")

    targets: list[str] = []
    while True:
        url = ask("Target URL (blank when done): ")
        if not url:
            if targets:
                break
            say("! at least one target URL required")
            continue
        try:
            targets.append(check_target(url))
        except SpecError as exc:
            say(f"! {exc}")

    def ask_int(prompt: str, default: int, minimum: int) -> int:
        while True:
            raw = ask(f"{prompt} [{default}]: ")
            if not raw:
                return default
            try:
                n = int(raw)
            except ValueError:
                say(f"! {raw!r} is not an integer")
                continue
            if n >= minimum:
                return n
            say(f"! must be at least {minimum}")

    max_pages = ask_int("Max pages", DEFAULT_MAX_PAGES, 1)
    max_depth = ask_int("Max link depth", DEFAULT_MAX_DEPTH, 0)
    spec = build_spec(keywords, mode, targets, max_pages, max_depth,
                      session_id=session_id, created_at=created_at)

    say("")
    say(describe_spec(spec))
    while True:
        answer = ask("Start scan? [Y/n]: ").lower()
        if answer in ("", "y", "yes"):
            return spec
        if answer in ("n", "no"):
            raise GuidedAborted(spec)
        say("! answer y or n")


def describe_spec(spec: SearchSpec) -> str:
    lines = [f"session   {spec.session_id}"]
    lines += [f"keyword   {k.kind}: {k.value}" for k in spec.keywords]
    lines.append(f"mode      {spec.combine}")
    lines += [f"target    {t}" for t in spec.targets]
    lines.append(f"limits    {spec.max_pages} pages, depth {spec.max_depth}")
    return "\n".join(lines)


# -- history -----------------------------------------------------------------

@dataclass(frozen=True)
class HistoryRecord:
    spec: SearchSpec
    outcome: str
    pages_scanned: int = 0
    pages_matched: int = 0
    report_path: Optional[str] = None

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome!r}")
        if not 0 <= self.pages_matched <= self.pages_scanned:
            raise ValueError("pages_matched must be between 0 and pages_scanned")

    def to_dict(self) -> dict:
        d = self.spec.to_dict()
        d.update(
            outcome=self.outcome,
            pages_scanned=self.pages_scanned,
            pages_matched=self.pages_matched,
            report_path=self.report_path,
        )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HistoryRecord":
        return cls(
            spec=SearchSpec.from_dict(d),
            outcome=d["outcome"],
            pages_scanned=d["pages_scanned"],
            pages_matched=d["pages_matched"],
            report_path=d.get("report_path"),
        )


def read_history(store_path: Path | str) -> list[HistoryRecord]:
    return [HistoryRecord.from_dict(d) for d in _read_history_array(Path(store_path))]


def _read_history_array(path: Path) -> list:
    if not path.exists():
        return []
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HistoryError(f"cannot read history file {path}: {exc}") from exc
    if not isinstance(data, list):
        raise HistoryError(f"history file {path} does not contain a JSON array")
    for i, entry in enumerate(data):
        try:
            HistoryRecord.from_dict(entry)
        except (TypeError, KeyError, ValueError, AttributeError) as exc:
            raise HistoryError(f"history file {path}: entry {i} is malformed ({exc!r})") from exc
    return data


def append_history(record: HistoryRecord, store_path: Path | str) -> None:
    path = Path(store_path)
    entries = _read_history_array(path)
    entries.append(record.to_dict())
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".history-", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(entries, fh, ensure_ascii=False, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
