import socket
from collections import defaultdict
from datetime import datetime, timezone

import pytest

from reconwatch import testkit
from reconwatch.session import TypedKeyword, build_spec

FIXED_TIME = datetime(2025, 1, 1, tzinfo=timezone.utc)
SESSION_ID = "20250101T000000-abc123"


def make_spec(keywords, combine="or", targets=("http://127.0.0.1/",), **kw):
    kws = [k if isinstance(k, TypedKeyword) else TypedKeyword(*k) for k in keywords]
    kw.setdefault("session_id", SESSION_ID)
    kw.setdefault("created_at", FIXED_TIME)
    return build_spec(kws, combine, list(targets), **kw)


@pytest.fixture
def home(tmp_path, monkeypatch):
    monkeypatch.setenv("RECONWATCH_HOME", str(tmp_path))
    return tmp_path


@pytest.fixture
def closed_port():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


@pytest.fixture
def scenario3():
    corpus = testkit.build_scenario3_corpus()
    with testkit.serve(corpus) as srv:
        yield corpus, srv


@pytest.fixture
def onion_scenario3():
    corpus = testkit.build_scenario3_corpus()
    with testkit.serve(corpus) as srv, testkit.mock_socks5((srv.host, srv.port)) as proxy:
        yield corpus, srv, proxy


@pytest.fixture
def dns_recorder(monkeypatch):
    """Records every host name passed to the local resolver."""
    seen = []
    real = socket.getaddrinfo

    def recording(host, *args, **kwargs):
        seen.append(host if isinstance(host, str) else str(host))
        return real(host, *args, **kwargs)

    monkeypatch.setattr(socket, "getaddrinfo", recording)
    return seen


# -- acceptance reporting ----------------------------------------------------

_acceptance = defaultdict(list)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and (report.when == "call" or report.outcome != "passed"):
        _acceptance[marker.args[0]].append((item.name, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        results = _acceptance[n]
        ok = all(outcome == "passed" for _, outcome in results)
        names = ", ".join(name for name, _ in results)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  ({names})")
