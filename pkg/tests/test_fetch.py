from urllib.parse import urlsplit

import pytest

from reconwatch import testkit
from reconwatch.fetch import (
    USER_AGENT,
    CrawlPlan,
    HostRateLimiter,
    PageDocument,
    RobotsVerdict,
    check_robots,
    extract_text,
    fetch_all,
    normalize_url,
    same_host_links,
)
from reconwatch.gateway import Gateway
from reconwatch.testkit import FixtureCorpus, FixturePage

ALLOWED, DENIED = RobotsVerdict.ALLOWED, RobotsVerdict.DENIED


# -- robots ------------------------------------------------------------------

def test_robots_disallow_prefix():
    robots = "User-agent: *\nDisallow: /private"
    assert check_robots("http://h/private/x", robots) is DENIED
    assert check_robots("http://h/public", robots) is ALLOWED


def test_robots_longest_match():
    # by hand: /a/b/c matches "Disallow: /a" (len 2) and "Allow: /a/b" (len 4); longer wins
    robots = "User-agent: *\nDisallow: /a\nAllow: /a/b"
    assert check_robots("http://h/a/b/c", robots) is ALLOWED
    assert check_robots("http://h/a/x", robots) is DENIED


def test_robots_missing_or_empty():
    assert check_robots("http://h/anything", "") is ALLOWED


def test_robots_specific_agent_group_wins():
    robots = "User-agent: *\nDisallow: /\n\nUser-agent: reconwatch\nDisallow: /secret\n"
    assert check_robots("http://h/page", robots) is ALLOWED
    assert check_robots("http://h/secret/1", robots) is DENIED


def test_robots_other_agents_ignored():
    robots = "User-agent: googlebot\nDisallow: /\n"
    assert check_robots("http://h/page", robots) is ALLOWED


def test_robots_wildcards_and_query():
    robots = "User-agent: *\nDisallow: /*.zip$\nDisallow: /?dwqa-question=secret"
    assert check_robots("http://h/files/a.zip", robots) is DENIED
    assert check_robots("http://h/files/a.zip.txt", robots) is ALLOWED
    assert check_robots("http://h/?dwqa-question=secret-2", robots) is DENIED
    assert check_robots("http://h/?dwqa-question=open", robots) is ALLOWED


def test_robots_malformed_lines_skipped():
    robots = "garbage line\nDisallow: /orphan\nUser-agent: *\n: nothing\nDisallow /nocolon\nDisallow: /x"
    assert check_robots("http://h/orphan", robots) is ALLOWED
    assert check_robots("http://h/nocolon", robots) is ALLOWED
    assert check_robots("http://h/x", robots) is DENIED


def test_robots_empty_disallow_allows_all():
    assert check_robots("http://h/x", "User-agent: *\nDisallow:\n") is ALLOWED


# -- rate limiter ------------------------------------------------------------

def test_rate_limit_first_request_free():
    assert HostRateLimiter(1.0).rate_limit_wait("a", 10.0) == 0.0


def test_rate_limit_second_request_waits():
    rl = HostRateLimiter(1.0)
    rl.rate_limit_wait("a", 0.0)
    assert rl.rate_limit_wait("a", 0.2) == pytest.approx(0.8)


def test_rate_limit_hosts_independent():
    rl = HostRateLimiter(1.0)
    assert [rl.rate_limit_wait(h, t) for h, t in [("a", 0.0), ("b", 0.1), ("a", 1.5), ("b", 1.6)]] == [0, 0, 0, 0]


def test_rate_limit_reservations_queue_up():
    rl = HostRateLimiter(1.0)
    waits = [rl.rate_limit_wait("a", 0.0) for _ in range(3)]
    assert waits == [0.0, 1.0, 2.0]


def test_rate_limit_completion_pushes_slot():
    rl = HostRateLimiter(1.0)
    rl.rate_limit_wait("a", 0.0)
    rl.complete("a", 0.5)  # slow response
    assert rl.rate_limit_wait("a", 1.0) == pytest.approx(0.5)


def test_rate_limit_requires_host():
    with pytest.raises(ValueError):
        HostRateLimiter(1.0).rate_limit_wait("", 0.0)


# -- extraction --------------------------------------------------------------

def test_extract_drops_script():
    assert extract_text("<p>hello <b>world</b></p><script>x()</script>") == ("hello world", [])


def test_extract_links_verbatim():
    assert extract_text('<a href="/t?p=2">next</a>') == ("next", ["/t?p=2"])


def test_extract_empty():
    assert extract_text("") == ("", [])


def test_extract_blocks_comments_templates():
    html = ("<html><head><style>p{}</style><title>T</title></head><body>"
            "<div>one\n   two<!-- hidden --></div><template><p>tpl</p></template>"
            "<ul><li>a</li><li>b</li></ul>tail</body></html>")
    assert extract_text(html)[0] == "T\none two\na\nb\ntail"


def test_extract_malformed_html():
    text, links = extract_text("<div><p>open <a href='x'>link<p>next</div></span>")
    assert "open" in text and "next" in text and links == ["x"]


def test_normalize_url():
    assert normalize_url("HTTP://Example.ORG:80/a?b=1#frag") == "http://example.org/a?b=1"
    assert normalize_url("https://user:pw@h.org:443") == "https://h.org/"
    assert normalize_url("http://h.org:8080/x") == "http://h.org:8080/x"


def test_same_host_links():
    links = same_host_links("http://h.org/a/", [
        "b", "/c?p=2#x", "http://other.org/", "mailto:a@b", "javascript:void(0)", "/c?p=2", "HTTP://H.ORG/d",
    ])
    assert links == ["http://h.org/a/b", "http://h.org/c?p=2", "http://h.org/d"]


def test_error_document_invariant():
    from datetime import datetime, timezone
    from reconwatch.fetch import FetchError
    with pytest.raises(ValueError):
        PageDocument("http://h/", None, "text", (), datetime.now(timezone.utc), FetchError("timeout", "x"))
    with pytest.raises(ValueError):
        FetchError("weird", "x")


# -- crawling against fixtures -----------------------------------------------

def _crawl(srv, **kw):
    kw.setdefault("per_host_delay", 0.0)
    plan = CrawlPlan(seeds=kw.pop("seeds", [srv.url]), **kw)
    return fetch_all(plan, Gateway())


def test_scenario3_link_expansion(scenario3):
    corpus, srv = scenario3
    docs = _crawl(srv, max_pages=100)
    assert len(docs) == 80
    non_seed = [d for d in docs if d.url != srv.url]
    assert len(non_seed) == 79 and all(d.ok for d in docs)
    assert [d.url for d in docs] == sorted(d.url for d in docs)
    for d in docs:
        assert all(urlsplit(l).netloc == urlsplit(srv.url).netloc for l in d.discovered_links)


def test_budget_of_one_fetches_only_seed(scenario3):
    corpus, srv = scenario3
    docs = _crawl(srv, max_pages=1)
    assert [d.url for d in docs] == [srv.url]
    assert len([l for l in docs[0].discovered_links if l != srv.url]) == 79
    assert set(corpus.requested_paths()) == {"/", "/robots.txt"}


@pytest.mark.parametrize("budget", [5, 33, 80, 200])
def test_budget_bound(scenario3, budget):
    _, srv = scenario3
    assert len(_crawl(srv, max_pages=budget)) == min(budget, 80)


def test_depth_zero(scenario3):
    _, srv = scenario3
    docs = _crawl(srv, max_depth=0)
    assert len(docs) == 1 and docs[0].depth == 0


def test_depth_bound():
    pages = {f"/{i}": FixturePage(f"<a href='/{i + 1}'>next</a>") for i in range(10)}
    pages["/"] = FixturePage("<a href='/0'>start</a>")
    with testkit.serve(FixtureCorpus(pages)) as srv:
        docs = _crawl(srv, max_depth=3)
    assert sorted(d.depth for d in docs) == [0, 1, 2, 3]
    assert max(d.depth for d in docs) <= 3


def test_user_agent_and_no_auth(scenario3):
    corpus, srv = scenario3
    _crawl(srv, max_pages=3)
    for rec in corpus.access_log:
        assert rec.headers["User-Agent"] == USER_AGENT
        assert not any(h.lower() in ("authorization", "cookie", "proxy-authorization") for h in rec.headers)


@pytest.mark.parametrize("pool", [1, 2, 8])
def test_pool_size_independence(pool):
    corpus = testkit.build_scenario3_corpus()
    with testkit.serve(corpus) as srv:
        base = _crawl(srv, pool_size=1, max_pages=50)
        other = _crawl(srv, pool_size=pool, max_pages=50)
    strip = lambda ds: [(d.url, d.http_status, d.extracted_text, d.discovered_links, d.depth) for d in ds]
    assert strip(base) == strip(other)


def test_three_seeds_pool_independent():
    corpora = [testkit.build_scenario1_corpus(), testkit.build_scenario2_corpus(), testkit.build_scenario3_corpus()]
    handles = [testkit.serve(c) for c in corpora]
    try:
        seeds = [h.url for h in handles]
        a = _crawl(handles[0], seeds=seeds, pool_size=1, max_depth=1)
        b = _crawl(handles[0], seeds=seeds, pool_size=2, max_depth=1)
    finally:
        for h in handles:
            h.close()
    assert [(d.url, d.extracted_text) for d in a] == [(d.url, d.extracted_text) for d in b]


def _bad_corpus():
    corpus = FixtureCorpus({
        "/": FixturePage("<a href='/a'>a</a><a href='/b'>b</a><a href='/boom'>c</a><a href='/cut'>d</a>"),
        "/a": FixturePage("<p>alpha</p>"),
        "/b": FixturePage("<p>beta</p>"),
        "/boom": FixturePage("<p>server error</p>", status=500),
        "/cut": FixturePage("<p>" + "x" * 5000 + "</p>", behavior="drop"),
    })
    return corpus


def test_crash_isolation():
    with testkit.serve(_bad_corpus()) as srv:
        docs = {urlsplit(d.url).path: d for d in _crawl(srv)}
    assert docs["/boom"].error.kind == "transport" and docs["/boom"].http_status == 500
    assert docs["/cut"].error.kind == "transport"
    assert [p for p, d in docs.items() if d.ok] == ["/", "/a", "/b"]
    assert docs["/a"].extracted_text == "alpha"


def test_non_html_not_parsed():
    corpus = FixtureCorpus({
        "/": FixturePage("<a href='/leak.pdf'>pdf</a>"),
        "/leak.pdf": FixturePage("%PDF-1.4 fake", content_type="application/pdf"),
    })
    with testkit.serve(corpus) as srv:
        docs = _crawl(srv)
    pdf = [d for d in docs if d.url.endswith(".pdf")][0]
    assert pdf.error.kind == "non_html" and pdf.extracted_text == ""


def test_redirects_followed_within_host():
    corpus = FixtureCorpus({
        "/": FixturePage("<a href='/old'>old</a><a href='/away'>away</a><a href='/loop0'>loop</a>"),
        "/old": FixturePage("", status=301, headers=(("Location", "/new"),)),
        "/new": FixturePage("<p>moved here</p>"),
        "/away": FixturePage("", status=302, headers=(("Location", "http://elsewhere.invalid/"),)),
        **{f"/loop{i}": FixturePage("", status=302, headers=(("Location", f"/loop{i + 1}"),)) for i in range(10)},
    })
    with testkit.serve(corpus) as srv:
        docs = {urlsplit(d.url).path: d for d in _crawl(srv, max_depth=1)}
        paths = corpus.requested_paths()
    assert docs["/old"].extracted_text == "moved here"
    assert "redirect leaves host" in docs["/away"].error.detail
    assert "redirects" in docs["/loop0"].error.detail
    assert paths.count("/robots.txt") == 1
    assert "/loop6" not in paths  # 1 initial request + 5 hops at most


def test_redirect_into_denied_path():
    corpus = FixtureCorpus({
        "/": FixturePage("<a href='/go'>go</a>"),
        "/go": FixturePage("", status=302, headers=(("Location", "/private/x"),)),
        "/private/x": FixturePage("<p>secret</p>"),
    }, robots="User-agent: *\nDisallow: /private\n")
    with testkit.serve(corpus) as srv:
        docs = {urlsplit(d.url).path: d for d in _crawl(srv)}
    assert docs["/go"].error.kind == "robots_denied"
    assert "/private/x" not in corpus.requested_paths()


def test_unreachable_seeds_all_errored(closed_port):
    plan = CrawlPlan(seeds=[f"http://127.0.0.1:{closed_port}/", f"http://127.0.0.1:{closed_port}/b"],
                     per_host_delay=0, timeout=2)
    docs = fetch_all(plan, Gateway())
    assert len(docs) == 2 and all(d.error and d.error.kind == "transport" for d in docs)


def test_timeout_recorded():
    import socket
    import threading

    listener = socket.socket()
    listener.bind(("127.0.0.1", 0))
    listener.listen(4)
    port = listener.getsockname()[1]
    held = []

    def accept():
        try:
            while True:
                held.append(listener.accept()[0])  # never answer
        except OSError:
            pass

    threading.Thread(target=accept, daemon=True).start()
    try:
        docs = fetch_all(CrawlPlan([f"http://127.0.0.1:{port}/"], timeout=0.3, per_host_delay=0), Gateway())
    finally:
        listener.close()
        for c in held:
            c.close()
    assert docs[0].error.kind == "timeout"
