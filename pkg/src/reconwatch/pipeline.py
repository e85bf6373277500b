"""End-to-end session: crawl, match, correlate, summarize, report, record."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .fetch import USER_AGENT, CrawlPlan, PageDocument, fetch_all
from .gateway import DEFAULT_PROXY, Gateway, proxy_from_env
from .query import DEFAULT_RADIUS, match_page
from .report import ReportError, default_report_path, render_report
from .session import HistoryError, HistoryRecord, SearchSpec, append_history, reconwatch_home
from .threat import BUNDLED_DB_DIR, AnalysisSummary, DatabaseError, build_summary, correlate, load_databases

log = logging.getLogger(__name__)

HISTORY_FILE = "history.json"
PAGES_LOG = "pages.log"


class SessionError(RuntimeError):
    """Configuration or storage failure that stops a session (exit code 2)."""


@dataclass
class RuntimeConfig:
    home: Optional[Path] = None
    db_dir: Path = BUNDLED_DB_DIR
    proxy: str = DEFAULT_PROXY
    per_host_delay: float = 1.0
    pool_size: int = 8
    timeout: float = 30.0
    probe_timeout: float = 5.0
    report_path: Optional[Path] = None
    snippet_radius: int = DEFAULT_RADIUS
    user_agent: str = USER_AGENT

    @classmethod
    def from_env(cls, **overrides) -> "RuntimeConfig":
        cfg = cls(home=reconwatch_home(), proxy=proxy_from_env())
        for k, v in overrides.items():
            if v is not None:
                setattr(cfg, k, v)
        return cfg

    @property
    def home_dir(self) -> Path:
        return Path(self.home) if self.home is not None else reconwatch_home()


@dataclass
class SessionOutcome:
    summary: AnalysisSummary
    report_path: Optional[Path]
    warnings: list[str] = field(default_factory=list)
    documents: list[PageDocument] = field(default_factory=list)
    session_dir: Optional[Path] = None
    stages: list[str] = field(default_factory=list)


def session_dir(home: Path, session_id: str) -> Path:
    return home / "sessions" / session_id


def write_pages_log(documents, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in documents:
            state = str(d.http_status) if d.error is None else d.error.kind
            fh.write(f"{d.url}\t{state}\t{d.byte_count}\t{d.elapsed_ms}\n")


def run_session(spec: SearchSpec, config: Optional[RuntimeConfig] = None) -> SessionOutcome:
    config = config or RuntimeConfig()
    home = config.home_dir
    history = home / HISTORY_FILE
    stages: list[str] = []
    warnings: list[str] = []

    def record(outcome: str, summary: Optional[AnalysisSummary] = None, report: Optional[Path] = None):
        scanned = summary.pages_scanned if summary else 0
        matched = summary.pages_matched if summary else 0
        try:
            append_history(HistoryRecord(spec, outcome, scanned, matched,
                                         str(report) if report else None), history)
        except (OSError, HistoryError) as exc:
            raise SessionError(f"cannot record session in history: {exc}") from exc
        stages.append("history")

    try:
        out_dir = session_dir(home, spec.session_id)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            db = load_databases(config.db_dir)
        except (OSError, DatabaseError) as exc:
            record("errored")
            raise SessionError(str(exc)) from exc
        stages.append("load")

        gateway = Gateway(config.proxy)
        routes = [gateway.route(t) for t in spec.targets]
        stages.append("classify")
        if any(r.is_dark for r in routes):
            probe = gateway.probe(config.probe_timeout)
            stages.append("probe")
            if not probe.reachable:
                warnings.append(f"proxy {gateway.proxy} unreachable ({probe.detail}); onion targets skipped")

        plan = CrawlPlan(
            seeds=list(spec.targets),
            max_pages=spec.max_pages,
            max_depth=spec.max_depth,
            per_host_delay=config.per_host_delay,
            pool_size=config.pool_size,
            timeout=config.timeout,
            user_agent=config.user_agent,
        )
        documents = fetch_all(plan, gateway)
        stages.append("fetch")
        for d in documents:
            if d.error is not None:
                warnings.append(f"{d.url}: {d.error.kind}: {d.error.detail}")

        matches = [
            match_page(d.extracted_text, spec.keywords, spec.combine, url=d.url, radius=config.snippet_radius)
            for d in documents if d.error is None
        ]
        stages.append("match")
        findings = correlate([m for m in matches if m.satisfied], spec, db)
        stages.append("correlate")
        summary = build_summary(spec, documents, matches, findings)
        try:
            summary.write(out_dir)
            write_pages_log(documents, out_dir / PAGES_LOG)
        except OSError as exc:
            record("errored", summary)
            raise SessionError(f"cannot write session output in {out_dir}: {exc}") from exc
        stages.append("summary")

        report_path: Optional[Path] = None
        try:
            target = Path(config.report_path) if config.report_path else default_report_path(spec.session_id, out_dir)
            report_path = render_report(summary, target)
            stages.append("report")
        except ReportError as exc:
            warnings.append(f"report not written: {exc}")

        record("completed", summary, report_path)
        return SessionOutcome(summary, report_path, warnings, documents, out_dir, stages)
    except KeyboardInterrupt:
        record("aborted")
        raise
