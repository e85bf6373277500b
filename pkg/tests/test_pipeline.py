import json

import pytest

from reconwatch import testkit
from reconwatch.pipeline import HISTORY_FILE, PAGES_LOG, RuntimeConfig, SessionError, run_session
from reconwatch.session import read_history
from reconwatch.testkit import QUERY_ONION, SCENARIO1_EMAIL, SCENARIO1_NAME, SCENARIO3_PHRASE
from reconwatch.threat import ANALYSIS_FILE, AnalysisSummary

from conftest import make_spec

ONION = f"http://{QUERY_ONION}/"


def config(home, **kw):
    kw.setdefault("per_host_delay", 0.0)
    kw.setdefault("probe_timeout", 2.0)
    kw.setdefault("timeout", 5.0)
    return RuntimeConfig(home=home, **kw)


def test_scenario1_over_onion(tmp_path, dns_recorder):
    corpus = testkit.build_scenario1_corpus()
    with testkit.serve(corpus) as srv, testkit.mock_socks5((srv.host, srv.port)) as proxy:
        spec = make_spec([("name", SCENARIO1_NAME), ("email", SCENARIO1_EMAIL)], "and", targets=[ONION])
        out = run_session(spec, config(tmp_path, proxy=proxy.address))
        accepted = proxy.accepted
    assert out.summary.pages_matched == 1
    assert out.summary.matches[0].url == ONION + "?dwqa-question=customer-export"
    assert accepted and len(accepted) == len(corpus.access_log)
    assert not [h for h in dns_recorder if h.endswith(".onion")]
    assert out.stages == ["load", "classify", "probe", "fetch", "match", "correlate", "summary", "report",
                          "history"]
    assert {f.id for f in out.summary.findings} >= {"T1589.002", "T1589.003"}


def test_proxy_down_still_reports(tmp_path, closed_port, dns_recorder):
    spec = make_spec([("text", "anything")], targets=[ONION])
    out = run_session(spec, config(tmp_path, proxy=f"127.0.0.1:{closed_port}"))
    assert out.summary.pages_scanned == 0 and out.summary.pages_errored == 1
    assert any("unreachable" in w for w in out.warnings)
    assert out.report_path.read_bytes().startswith(b"%PDF-")
    assert not [h for h in dns_recorder if h.endswith(".onion")]
    [rec] = read_history(tmp_path / HISTORY_FILE)
    assert rec.outcome == "completed" and rec.pages_scanned == 0


def test_surface_target_skips_probe(tmp_path, scenario3):
    _, srv = scenario3
    out = run_session(make_spec([("text", SCENARIO3_PHRASE)], targets=[srv.url]), config(tmp_path))
    assert "probe" not in out.stages
    assert out.summary.pages_matched == 79


def test_session_layout(tmp_path, scenario3):
    _, srv = scenario3
    spec = make_spec([("text", SCENARIO3_PHRASE)], targets=[srv.url], max_pages=5)
    out = run_session(spec, config(tmp_path))
    sdir = tmp_path / "sessions" / spec.session_id
    assert out.session_dir == sdir
    assert AnalysisSummary.read(sdir / ANALYSIS_FILE) == out.summary
    lines = (sdir / PAGES_LOG).read_text().splitlines()
    assert len(lines) == 5
    url, state, size, ms = lines[0].split("\t")
    assert url == srv.url and state == "200" and int(size) > 0 and int(ms) >= 0
    assert out.report_path.parent == sdir and out.report_path.name == f"report_{spec.session_id}.pdf"


def test_history_one_record_per_run(tmp_path, scenario3):
    _, srv = scenario3
    for i in range(3):
        run_session(make_spec([("text", "x")], targets=[srv.url], max_pages=2, session_id=f"s{i}"),
                    config(tmp_path))
    records = read_history(tmp_path / HISTORY_FILE)
    assert [r.spec.session_id for r in records] == ["s0", "s1", "s2"]
    assert all(r.outcome == "completed" for r in records)


def test_missing_db_records_errored(tmp_path):
    spec = make_spec([("text", "x")])
    with pytest.raises(SessionError, match="mitre.json"):
        run_session(spec, config(tmp_path, db_dir=tmp_path / "nowhere"))
    [rec] = read_history(tmp_path / HISTORY_FILE)
    assert rec.outcome == "errored"


def test_report_failure_is_warning(tmp_path, scenario3):
    _, srv = scenario3
    spec = make_spec([("text", "x")], targets=[srv.url], max_pages=1)
    out = run_session(spec, config(tmp_path, report_path=tmp_path / "no" / "such" / "r.pdf"))
    assert out.report_path is None
    assert any("report not written" in w for w in out.warnings)
    assert "report" not in out.stages and out.stages[-1] == "history"
    assert read_history(tmp_path / HISTORY_FILE)[0].outcome == "completed"


def test_corrupt_history_stops_session(tmp_path, scenario3):
    _, srv = scenario3
    (tmp_path / HISTORY_FILE).write_text("{not json")
    with pytest.raises(SessionError):
        run_session(make_spec([("text", "x")], targets=[srv.url], max_pages=1), config(tmp_path))
    assert (tmp_path / HISTORY_FILE).read_text() == "{not json"


def test_rerun_identical_summary(tmp_path, scenario3):
    _, srv = scenario3
    spec = make_spec([("text", SCENARIO3_PHRASE), ("text", "leak")], targets=[srv.url])
    a = run_session(spec, config(tmp_path / "a")).summary.to_dict()
    b = run_session(spec, config(tmp_path / "b", pool_size=2)).summary.to_dict()
    a.pop("generated_at"), b.pop("generated_at")
    assert a == b


def test_summary_json_keys(tmp_path, scenario3):
    _, srv = scenario3
    spec = make_spec([("text", SCENARIO3_PHRASE)], targets=[srv.url], max_pages=3)
    run_session(spec, config(tmp_path))
    data = json.loads((tmp_path / "sessions" / spec.session_id / ANALYSIS_FILE).read_text())
    assert data["stats"] == {"pages_scanned": 3, "pages_matched": 2, "pages_errored": 0}
