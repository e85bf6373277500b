"""PDF threat report.

The PDF is written directly: standard Type1 fonts, uncompressed content
streams, one column. Body text is Courier so wrapping is exact character
counting. Long URLs are cut into fixed-width pieces ending in
``CONTINUATION``; deleting each marker together with the following line
break and indent restores the URL.
"""
from __future__ import annotations

import os
import re
import textwrap
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .session import reconwatch_home
from .threat import AnalysisSummary

TITLE = "Threat Intelligence Report"
SECTION_HEADINGS = (
    "Search Configuration Summary",
    "Detected Keywords",
    "Associated CVEs and MITRE Techniques",
    "Suggested Mitigations",
)
NONE_FOUND = "None found."
CONTINUATION = "\\"
SNIPPET_LIMIT = 200

PAGE_W, PAGE_H = 595, 842  # A4 in points
MARGIN = 56
BODY_SIZE = 9
BODY_LEADING = 12
CHAR_W = BODY_SIZE * 0.6  # Courier advance width is 600/1000 em
COLS = int((PAGE_W - 2 * MARGIN) // CHAR_W)
FOOTER_Y = 30


class ReportError(OSError):
    pass


def default_report_path(session_id: str, base_dir: Path | str | None = None) -> Path:
    """``base_dir/report_<session_id>.pdf``, suffixed ``-1``, ``-2``... if taken."""
    if not session_id:
        raise ValueError("session id must not be empty")
    base = Path(base_dir) if base_dir is not None else reconwatch_home()
    path = base / f"report_{session_id}.pdf"
    n = 0
    while path.exists():
        n += 1
        path = base / f"report_{session_id}-{n}.pdf"
    return path


def wrap_url(url: str, width: int = COLS) -> list[str]:
    if len(url) <= width:
        return [url]
    step = width - len(CONTINUATION)
    pieces = [url[i:i + step] for i in range(0, len(url), step)]
    return [p + CONTINUATION for p in pieces[:-1]] + [pieces[-1]]


def unwrap_urls(text: str) -> str:
    """Rejoin wrapped URLs, dropping the marker, line break and indent."""
    return re.sub(re.escape(CONTINUATION) + r"\n[ ]*", "", text)


def truncate(text: str, limit: int = SNIPPET_LIMIT) -> str:
    return text if len(text) <= limit else text[: limit - 1] + "…"


def _pdf_string(text: str) -> bytes:
    raw = text.encode("cp1252", errors="replace")
    out = bytearray(b"(")
    for b in raw:
        if b in (0x28, 0x29, 0x5C):
            out += b"\\" + bytes([b])
        elif 32 <= b < 127:
            out.append(b)
        else:
            out += b"\\%03o" % b
    out += b")"
    return bytes(out)


class _Layout:
    """Accumulates positioned text lines and breaks pages."""

    def __init__(self):
        self.pages: list[list[bytes]] = []
        self._new_page()

    def _new_page(self):
        self.pages.append([])
        self.y = PAGE_H - MARGIN

    def _need(self, height: float):
        if self.y - height < MARGIN:
            self._new_page()

    def text(self, s: str, font: str = "F1", size: float = BODY_SIZE, x: float = MARGIN):
        self._need(size + 3)
        self.y -= size + 3
        self.pages[-1].append(
            b"BT /%s %g Tf %g %g Td %s Tj ET" % (font.encode(), size, x, self.y, _pdf_string(s))
        )

    def gap(self, h: float = 6):
        self.y -= h

    def heading(self, s: str):
        self._need(40)
        self.gap(10)
        self.text(s, "F2", 13)
        self.gap(4)

    def para(self, s: str, indent: int = 0):
        width = COLS - indent
        lines = textwrap.wrap(s, width, break_on_hyphens=False) or [""]
        for line in lines:
            self.text(" " * indent + line)

    def url(self, url: str, indent: int = 0):
        for piece in wrap_url(url, COLS - indent):
            self.text(" " * indent + piece)


def _layout(summary: AnalysisSummary) -> _Layout:
    spec = summary.spec
    lay = _Layout()
    lay.text(TITLE, "F2", 18)
    lay.gap(4)

    lay.heading(SECTION_HEADINGS[0])
    lay.para(f"Session: {spec.session_id}")
    lay.para(f"Started: {spec.created_at.isoformat()}")
    lay.para(f"Mode: {spec.combine}")
    for kw in spec.keywords:
        lay.para(f"Keyword ({kw.kind}): {kw.value}")
    for t in spec.targets:
        lay.para("Target:")
        lay.url(t, indent=2)
    lay.para(f"Limits: {spec.max_pages} pages, link depth {spec.max_depth}")
    lay.para(
        f"Pages scanned: {summary.pages_scanned}   matched: {summary.pages_matched}"
        f"   errored: {summary.pages_errored}"
    )

    lay.heading(SECTION_HEADINGS[1])
    if not summary.matches:
        lay.para(NONE_FOUND)
    for m in summary.matches:
        lay.para("Link:")
        lay.url(m.url, indent=2)
        lay.para("Matched: " + ", ".join(m.matched_values), indent=2)
        for sn in m.snippets:
            lay.para(f"[{sn.value}] {truncate(sn.context)}", indent=4)
        lay.gap()

    lay.heading(SECTION_HEADINGS[2])
    if not summary.findings:
        lay.para(NONE_FOUND)
    for f in summary.findings:
        if f.source == "mitre":
            lay.para(f"{f.id} {f.name} (tactic {f.category})")
        else:
            sev = f" (severity {f.severity:.1f})" if f.severity is not None else ""
            lay.para(f"{f.id}{sev}")
        trig = f.matched_trigger
        rule = f"kind={trig.kind}" if trig.kind else f"term={trig.term!r}"
        lay.para(f"Trigger {rule}; evidence on {len({u for u, _ in f.evidence})} page(s):", indent=2)
        for url, value in f.evidence:
            lay.para(f"[{value}]", indent=4)
            lay.url(url, indent=6)
        lay.gap()

    lay.heading(SECTION_HEADINGS[3])
    mitigations = list(dict.fromkeys(m for f in summary.findings for m in f.mitigations))
    if not mitigations:
        lay.para(NONE_FOUND)
    for m in mitigations:
        lines = textwrap.wrap(m, COLS - 2, break_on_hyphens=False)
        lay.text("- " + lines[0])
        for rest in lines[1:]:
            lay.text("  " + rest)
    return lay


def _assemble(pages: list[list[bytes]], footer: str) -> bytes:
    objects: list[bytes] = []

    def add(body: bytes) -> int:
        objects.append(body)
        return len(objects)

    catalog = add(b"")  # filled below
    pages_obj = add(b"")
    f1 = add(b"<< /Type /Font /Subtype /Type1 /BaseFont /Courier /Encoding /WinAnsiEncoding >>")
    f2 = add(b"<< /Type /Font /Subtype /Type1 /BaseFont /Helvetica-Bold /Encoding /WinAnsiEncoding >>")
    kids = []
    total = len(pages)
    for n, ops in enumerate(pages, 1):
        foot = f"{footer} | page {n} of {total}"
        stream = b"\n".join(ops + [
            b"BT /F1 7 Tf %g %g Td %s Tj ET" % (MARGIN, FOOTER_Y, _pdf_string(foot))
        ]) + b"\n"
        content = add(b"<< /Length %d >>\nstream\n%sendstream" % (len(stream), stream))
        kids.append(add(
            b"<< /Type /Page /Parent %d 0 R /MediaBox [0 0 %d %d] "
            b"/Resources << /Font << /F1 %d 0 R /F2 %d 0 R >> >> /Contents %d 0 R >>"
            % (pages_obj, PAGE_W, PAGE_H, f1, f2, content)
        ))
    objects[catalog - 1] = b"<< /Type /Catalog /Pages %d 0 R >>" % pages_obj
    objects[pages_obj - 1] = b"<< /Type /Pages /Kids [%s] /Count %d >>" % (
        b" ".join(b"%d 0 R" % k for k in kids), len(kids))

    out = bytearray(b"%PDF-1.4\n%\xe2\xe3\xcf\xd3\n")
    offsets = []
    for i, body in enumerate(objects, 1):
        offsets.append(len(out))
        out += b"%d 0 obj\n%s\nendobj\n" % (i, body)
    xref = len(out)
    out += b"xref\n0 %d\n0000000000 65535 f \n" % (len(objects) + 1)
    for off in offsets:
        out += b"%010d 00000 n \n" % off
    out += b"trailer\n<< /Size %d /Root %d 0 R >>\nstartxref\n%d\n%%%%EOF" % (
        len(objects) + 1, catalog, xref)
    return bytes(out)


def render_bytes(summary: AnalysisSummary, now: Optional[datetime] = None) -> bytes:
    now = (now or datetime.now(timezone.utc)).astimezone(timezone.utc)
    footer = f"Generated {now.strftime('%Y-%m-%dT%H:%M:%SZ')} | session {summary.spec.session_id}"
    return _assemble(_layout(summary).pages, footer)


def render_report(summary: AnalysisSummary, out_path: Path | str, now: Optional[datetime] = None) -> Path:
    out_path = Path(out_path)
    data = render_bytes(summary, now)
    tmp = out_path.with_name(out_path.name + ".part")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, out_path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise ReportError(f"cannot write report to {out_path}: {exc}") from exc
    return out_path
