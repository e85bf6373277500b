"""Exact-match boolean keyword evaluation.

Both page text and keyword values are whitespace-collapsed and Unicode
case-folded before a plain substring test. Nothing else is normalized.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .session import TypedKeyword

DEFAULT_RADIUS = 80
ELLIPSIS = "…"

_WS = re.compile(r"\s+")


class NoOccurrence(LookupError):
    pass


def collapse_ws(text: str) -> str:
    return _WS.sub(" ", text)


def fold(text: str) -> str:
    return collapse_ws(text).casefold()


class _FoldedText:
    """Collapsed text plus its case-folded form and an index map back.

    Case folding may expand a character (``ß`` -> ``ss``), so each folded
    position records which collapsed character produced it.
    """

    def __init__(self, text: str):
        self.text = collapse_ws(text)
        pieces = []
        origin = []
        for i, ch in enumerate(self.text):
            f = ch.casefold()
            pieces.append(f)
            origin.extend([i] * len(f))
        self.folded = "".join(pieces)
        self.origin = origin

    def find(self, value: str) -> tuple[int, int] | None:
        needle = fold(value)
        if not needle:
            return None
        pos = self.folded.find(needle)
        if pos < 0:
            return None
        return self.origin[pos], self.origin[pos + len(needle) - 1] + 1


def _context(ft: _FoldedText, span: tuple[int, int], radius: int) -> str:
    start, end = span
    lo = max(0, start - radius)
    hi = min(len(ft.text), end + radius)
    out = ft.text[lo:hi]
    if lo > 0:
        out = ELLIPSIS + out
    if hi < len(ft.text):
        out = out + ELLIPSIS
    return out


def extract_snippet(text: str, value: str, radius: int = DEFAULT_RADIUS) -> str:
    """Return the first occurrence of ``value`` with ``radius`` characters either side."""
    ft = _FoldedText(text)
    span = ft.find(value)
    if span is None:
        raise NoOccurrence(f"no occurrence of {value!r} in text")
    return _context(ft, span, radius)


@dataclass(frozen=True)
class Snippet:
    value: str
    context: str

    def to_dict(self) -> dict:
        return {"value": self.value, "context": self.context}


@dataclass(frozen=True)
class MatchRecord:
    url: str
    satisfied: bool
    matched_values: tuple[str, ...] = ()
    snippets: tuple[Snippet, ...] = ()

    def to_dict(self) -> dict:
        return {
            "url": self.url,
            "satisfied": self.satisfied,
            "matched_values": list(self.matched_values),
            "snippets": [s.to_dict() for s in self.snippets],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MatchRecord":
        return cls(
            url=d["url"],
            satisfied=d["satisfied"],
            matched_values=tuple(d["matched_values"]),
            snippets=tuple(Snippet(s["value"], s["context"]) for s in d["snippets"]),
        )


def _distinct_values(keywords: Iterable[TypedKeyword]) -> list[str]:
    seen = set()
    values = []
    for kw in keywords:
        if kw.value not in seen:
            seen.add(kw.value)
            values.append(kw.value)
    return values


def match_page(
    text: str,
    keywords: Sequence[TypedKeyword],
    combine: str,
    url: str = "",
    radius: int = DEFAULT_RADIUS,
) -> MatchRecord:
    combine = combine.upper()
    if combine not in ("AND", "OR"):
        raise ValueError(f"combine must be AND or OR, got {combine!r}")
    values = _distinct_values(keywords)
    ft = _FoldedText(text)
    matched = []
    snippets = []
    for value in values:
        span = ft.find(value)
        if span is not None:
            matched.append(value)
            snippets.append(Snippet(value, _context(ft, span, radius)))
    if combine == "AND":
        satisfied = bool(values) and len(matched) == len(values)
    else:
        satisfied = bool(matched)
    return MatchRecord(url, satisfied, tuple(matched), tuple(snippets))
