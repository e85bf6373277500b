"""ATT&CK / CVE correlation and the per-session analysis artifact."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .fetch import PageDocument
from .query import MatchRecord, fold
from .session import KINDS, SearchSpec

BUNDLED_DB_DIR = Path(__file__).parent / "dat"
ANALYSIS_FILE = "temp_analysis.json"

_TECHNIQUE_ID = re.compile(r"^T\d{4}(\.\d{3})?$")
_TACTIC_ID = re.compile(r"^TA\d{4}$")
_CVE_ID = re.compile(r"^CVE-\d{4}-\d{4,}$")


class DatabaseError(Exception):
    pass


class MissingDatabase(DatabaseError):
    def __init__(self, path: Path | str):
        super().__init__(str(path))
        self.path = Path(path)


class SchemaError(DatabaseError):
    def __init__(self, file: str, index: Optional[int], field: str, message: str):
        where = f"{file}[{index}].{field}" if index is not None else f"{file}: {field}"
        super().__init__(f"{where}: {message}")
        self.file, self.index, self.field = file, index, field


class ConsistencyError(Exception):
    pass


@dataclass(frozen=True)
class Trigger:
    kind: Optional[str] = None
    term: Optional[str] = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "term": self.term}

    def fires(self, value: str, value_kinds: Iterable[str], context: str = "") -> bool:
        if self.kind is not None and self.kind in value_kinds:
            return True
        if self.term is not None:
            return self.term in fold(value) or self.term in fold(context)
        return False


@dataclass(frozen=True)
class MitreTechnique:
    technique_id: str
    tactic_id: str
    name: str
    description: str
    triggers: tuple[Trigger, ...]
    mitigations: tuple[str, ...]


@dataclass(frozen=True)
class CveEntry:
    cve_id: str
    description: str
    severity: float
    triggers: tuple[Trigger, ...]


@dataclass(frozen=True)
class ThreatDatabase:
    techniques: tuple[MitreTechnique, ...]
    cves: tuple[CveEntry, ...]


def _require(entry: dict, key: str, typ, file: str, index: int):
    if key not in entry:
        raise SchemaError(file, index, key, "missing")
    value = entry[key]
    if not isinstance(value, typ) or isinstance(value, bool):
        raise SchemaError(file, index, key, f"expected {getattr(typ, '__name__', typ)}")
    return value


def _triggers(entry: dict, file: str, index: int) -> tuple[Trigger, ...]:
    raw = _require(entry, "triggers", list, file, index)
    if not raw:
        raise SchemaError(file, index, "triggers", "must not be empty")
    out = []
    for t in raw:
        if not isinstance(t, dict):
            raise SchemaError(file, index, "triggers", "each trigger must be an object")
        kind, term = t.get("kind"), t.get("term")
        if kind is None and term is None:
            raise SchemaError(file, index, "triggers", "trigger needs a kind or a term")
        if kind is not None and kind not in KINDS:
            raise SchemaError(file, index, "triggers", f"unknown kind {kind!r}")
        if term is not None:
            if not isinstance(term, str) or not term.strip():
                raise SchemaError(file, index, "triggers", "term must be a non-empty string")
            term = fold(term.strip())
        out.append(Trigger(kind, term))
    return tuple(out)


def _load_array(path: Path) -> list:
    if not path.is_file():
        raise MissingDatabase(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(path.name, None, "<file>", f"not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise SchemaError(path.name, None, "<file>", "top level must be an array")
    return data


def load_databases(directory: Path | str = BUNDLED_DB_DIR) -> ThreatDatabase:
    directory = Path(directory)
    mitre_raw = _load_array(directory / "mitre.json")
    cve_raw = _load_array(directory / "cve.json")

    techniques = []
    seen: set[str] = set()
    for i, e in enumerate(mitre_raw):
        if not isinstance(e, dict):
            raise SchemaError("mitre.json", i, "<entry>", "must be an object")
        tid = _require(e, "technique_id", str, "mitre.json", i)
        if not _TECHNIQUE_ID.match(tid):
            raise SchemaError("mitre.json", i, "technique_id", f"{tid!r} does not match T####(.###)")
        if tid in seen:
            raise SchemaError("mitre.json", i, "technique_id", f"duplicate id {tid}")
        seen.add(tid)
        tactic = _require(e, "tactic_id", str, "mitre.json", i)
        if not _TACTIC_ID.match(tactic):
            raise SchemaError("mitre.json", i, "tactic_id", f"{tactic!r} does not match TA####")
        mitigations = _require(e, "mitigations", list, "mitre.json", i)
        if not all(isinstance(m, str) for m in mitigations):
            raise SchemaError("mitre.json", i, "mitigations", "must be strings")
        techniques.append(MitreTechnique(
            technique_id=tid,
            tactic_id=tactic,
            name=_require(e, "name", str, "mitre.json", i),
            description=_require(e, "description", str, "mitre.json", i),
            triggers=_triggers(e, "mitre.json", i),
            mitigations=tuple(mitigations),
        ))

    cves = []
    seen.clear()
    for i, e in enumerate(cve_raw):
        if not isinstance(e, dict):
            raise SchemaError("cve.json", i, "<entry>", "must be an object")
        cid = _require(e, "cve_id", str, "cve.json", i)
        if not _CVE_ID.match(cid):
            raise SchemaError("cve.json", i, "cve_id", f"{cid!r} does not match CVE-YYYY-NNNN")
        if cid in seen:
            raise SchemaError("cve.json", i, "cve_id", f"duplicate id {cid}")
        seen.add(cid)
        severity = _require(e, "severity", (int, float), "cve.json", i)
        if not 0.0 <= severity <= 10.0:
            raise SchemaError("cve.json", i, "severity", f"{severity} outside [0.0, 10.0]")
        cves.append(CveEntry(cid, _require(e, "description", str, "cve.json", i),
                             float(severity), _triggers(e, "cve.json", i)))
    return ThreatDatabase(tuple(techniques), tuple(cves))


# -- correlation -------------------------------------------------------------

@dataclass(frozen=True)
class ThreatFinding:
    source: str  # "mitre" | "cve"
    id: str
    name: str
    matched_trigger: Trigger
    evidence: tuple[tuple[str, str], ...]
    mitigations: tuple[str, ...]
    category: Optional[str] = None  # tactic id for techniques
    severity: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "id": self.id,
            "name": self.name,
            "category": self.category,
            "severity": self.severity,
            "matched_trigger": self.matched_trigger.to_dict(),
            "evidence": [{"url": u, "value": v} for u, v in self.evidence],
            "mitigations": list(self.mitigations),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ThreatFinding":
        return cls(
            source=d["source"],
            id=d["id"],
            name=d["name"],
            matched_trigger=Trigger(**d["matched_trigger"]),
            evidence=tuple((e["url"], e["value"]) for e in d["evidence"]),
            mitigations=tuple(d["mitigations"]),
            category=d.get("category"),
            severity=d.get("severity"),
        )


def cve_mitigation(cve_id: str) -> str:
    return f"Apply the vendor fix or published workaround for {cve_id} on any affected system."


def _evidence_pairs(matches: Sequence[MatchRecord], spec: SearchSpec):
    kinds: dict[str, set[str]] = {}
    for kw in spec.keywords:
        kinds.setdefault(kw.value, set()).add(kw.kind)
    for m in matches:
        if not m.satisfied:
            continue
        contexts = {s.value: s.context for s in m.snippets}
        for value in m.matched_values:
            yield m.url, value, kinds.get(value, set()), contexts.get(value, "")


def correlate(matches: Sequence[MatchRecord], spec: SearchSpec, db: ThreatDatabase) -> list[ThreatFinding]:
    """One finding per database entry with at least one firing (url, value) pair."""
    pairs = list(_evidence_pairs(matches, spec))
    entries = [("mitre", t.technique_id, t) for t in db.techniques]
    entries += [("cve", c.cve_id, c) for c in db.cves]
    findings = []
    for source, entry_id, entry in entries:
        evidence = set()
        first = None
        for trig in entry.triggers:
            hit = {(url, v) for url, v, kinds, ctx in pairs if trig.fires(v, kinds, ctx)}
            if hit and first is None:
                first = trig
            evidence |= hit
        if not evidence:
            continue
        if source == "mitre":
            findings.append(ThreatFinding("mitre", entry_id, entry.name, first, tuple(sorted(evidence)),
                                          entry.mitigations, category=entry.tactic_id))
        else:
            findings.append(ThreatFinding("cve", entry_id, entry.cve_id, first, tuple(sorted(evidence)),
                                          (cve_mitigation(entry_id),), severity=entry.severity))
    findings.sort(key=lambda f: (f.source, f.id))
    return findings


# -- summary -----------------------------------------------------------------

@dataclass(frozen=True)
class AnalysisSummary:
    spec: SearchSpec
    matches: tuple[MatchRecord, ...]
    findings: tuple[ThreatFinding, ...]
    pages_scanned: int
    pages_matched: int
    pages_errored: int
    generated_at: datetime

    @property
    def stats(self) -> dict:
        return {
            "pages_scanned": self.pages_scanned,
            "pages_matched": self.pages_matched,
            "pages_errored": self.pages_errored,
        }

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "stats": self.stats,
            "matches": [m.to_dict() for m in self.matches],
            "findings": [f.to_dict() for f in self.findings],
            "generated_at": self.generated_at.isoformat(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisSummary":
        return cls(
            spec=SearchSpec.from_dict(d["spec"]),
            matches=tuple(MatchRecord.from_dict(m) for m in d["matches"]),
            findings=tuple(ThreatFinding.from_dict(f) for f in d["findings"]),
            generated_at=datetime.fromisoformat(d["generated_at"]),
            **d["stats"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2) + "\n"

    def write(self, session_dir: Path | str) -> Path:
        path = Path(session_dir) / ANALYSIS_FILE
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: Path | str) -> "AnalysisSummary":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_summary(
    spec: SearchSpec,
    documents: Sequence[PageDocument],
    matches: Sequence[MatchRecord],
    findings: Sequence[ThreatFinding],
    generated_at: Optional[datetime] = None,
) -> AnalysisSummary:
    urls = {d.url for d in documents}
    satisfied = tuple(m for m in matches if m.satisfied)
    for m in satisfied:
        if m.url not in urls:
            raise ConsistencyError(f"match for {m.url} has no fetched document")
    matched_urls = {m.url for m in satisfied}
    for f in findings:
        stray = {u for u, _ in f.evidence} - matched_urls
        if stray:
            raise ConsistencyError(f"finding {f.id} cites unmatched URLs {sorted(stray)}")
    errored = sum(1 for d in documents if d.error is not None)
    return AnalysisSummary(
        spec=spec,
        matches=satisfied,
        findings=tuple(findings),
        pages_scanned=len(documents) - errored,
        pages_matched=len(satisfied),
        pages_errored=errored,
        generated_at=generated_at or datetime.now(timezone.utc),
    )
