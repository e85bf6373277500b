"""Polite concurrent page retrieval.

The crawl runs breadth-first in depth levels. Each level is fetched by a
thread pool, then its discovered links are merged in page order to form
the next level, so the visited set and the page budget are applied the
same way whatever the pool size. Requests to one host are serialized
behind a per-host lock and spaced by the rate limiter, measured from the
end of the previous request to the start of the next.
"""
from __future__ import annotations

import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Callable, Optional
from urllib.parse import urljoin, urlsplit, urlunsplit

import requests
from bs4 import BeautifulSoup, Comment, Declaration, Doctype, ProcessingInstruction

from .gateway import Gateway, TransportRoute

log = logging.getLogger(__name__)

AGENT_TOKEN = "reconwatch"
USER_AGENT = "reconwatch/0.1 (+https://example.invalid/reconwatch; passive keyword scanner)"
ERROR_KINDS = ("timeout", "transport", "robots_denied", "non_html", "proxy")
HTML_TYPES = ("text/html", "application/xhtml+xml")


# -- URLs --------------------------------------------------------------------

def normalize_url(url: str) -> str:
    """Lowercase scheme and host, drop fragment, userinfo and default port."""
    parts = urlsplit(url.strip())
    scheme = parts.scheme.lower()
    host = (parts.hostname or "").lower()
    port = parts.port
    if port is not None and not (scheme, port) in (("http", 80), ("https", 443)):
        host = f"{host}:{port}"
    return urlunsplit((scheme, host, parts.path or "/", parts.query, ""))


def host_key(url: str) -> str:
    return urlsplit(normalize_url(url)).netloc


def same_host_links(base_url: str, hrefs: list[str]) -> list[str]:
    host = host_key(base_url)
    out, seen = [], set()
    for href in hrefs:
        try:
            absolute = urljoin(base_url, href.strip())
            if urlsplit(absolute).scheme not in ("http", "https"):
                continue
            norm = normalize_url(absolute)
        except ValueError:
            continue
        if urlsplit(norm).netloc == host and norm not in seen:
            seen.add(norm)
            out.append(norm)
    return out


# -- robots.txt --------------------------------------------------------------

class RobotsVerdict(str, Enum):
    ALLOWED = "allowed"
    DENIED = "denied"


def _parse_robots(body: str) -> list[tuple[list[str], list[tuple[bool, str]]]]:
    groups: list[tuple[list[str], list[tuple[bool, str]]]] = []
    agents: list[str] = []
    rules: list[tuple[bool, str]] = []
    for raw in body.splitlines():
        line = raw.split("#", 1)[0].strip()
        if ":" not in line:
            continue
        name, value = (s.strip() for s in line.split(":", 1))
        name = name.lower()
        if name == "user-agent":
            if rules:
                groups.append((agents, rules))
                agents, rules = [], []
            if value:
                agents.append(value.lower())
        elif name in ("allow", "disallow"):
            if not agents:
                continue
            if value:
                rules.append((name == "allow", value))
            elif name == "disallow":
                # "Disallow:" with nothing opens the group without a rule
                rules.append((True, ""))
    if agents:
        groups.append((agents, rules))
    return groups


def _rule_matches(pattern: str, path: str) -> bool:
    anchored = pattern.endswith("$")
    if anchored:
        pattern = pattern[:-1]
    regex = ".*".join(re.escape(piece) for piece in pattern.split("*"))
    return re.match(regex + (r"\Z" if anchored else ""), path) is not None


def check_robots(url: str, robots_body: str, agent: str = AGENT_TOKEN) -> RobotsVerdict:
    parts = urlsplit(url)
    path = (parts.path or "/") + (f"?{parts.query}" if parts.query else "")
    if path == "/robots.txt":
        return RobotsVerdict.ALLOWED
    groups = _parse_robots(robots_body or "")
    agent = agent.lower()
    chosen = [rules for agents, rules in groups if agent in agents]
    if not chosen:
        chosen = [rules for agents, rules in groups if "*" in agents]
    best_len, allowed = -1, True
    for rules in chosen:
        for allow, pattern in rules:
            if not pattern or not _rule_matches(pattern, path):
                continue
            length = len(pattern)
            if length > best_len or (length == best_len and allow):
                best_len, allowed = length, allow
    return RobotsVerdict.ALLOWED if allowed else RobotsVerdict.DENIED


# -- rate limiting -----------------------------------------------------------

class HostRateLimiter:
    """Per-host spacing of request start times.

    :meth:`rate_limit_wait` reserves the next slot for ``host`` and returns
    how long the caller must sleep first. :meth:`complete` moves the host's
    reference point to the end of a request so slow responses also count.
    """

    def __init__(self, per_host_delay: float):
        self.per_host_delay = per_host_delay
        self._last: dict[str, float] = {}
        self._lock = threading.Lock()

    def rate_limit_wait(self, host: str, now: float) -> float:
        if not host:
            raise ValueError("host must not be empty")
        with self._lock:
            last = self._last.get(host)
            wait = 0.0 if last is None else max(0.0, last + self.per_host_delay - now)
            self._last[host] = now + wait
            return wait

    def complete(self, host: str, when: float) -> None:
        with self._lock:
            self._last[host] = max(self._last.get(host, when), when)


# -- text extraction ---------------------------------------------------------

_BLOCK_TAGS = frozenset("""
    address article aside blockquote body br caption dd details div dl dt fieldset figcaption
    figure footer form h1 h2 h3 h4 h5 h6 head header hr html li main nav ol p pre section
    summary table tbody td tfoot th thead title tr ul
""".split())
_DROP_TAGS = ("script", "style", "template")
_SKIP_STRINGS = (Comment, Declaration, Doctype, ProcessingInstruction)


def extract_text(html: str) -> tuple[str, list[str]]:
    """Visible text (one line per block) and raw anchor hrefs of a page."""
    if not html:
        return "", []
    soup = BeautifulSoup(html, "html.parser")
    for tag in soup.find_all(_DROP_TAGS):
        tag.decompose()
    links = [a["href"] for a in soup.find_all("a", href=True)]

    chunks: list[str | None] = []  # None marks a block boundary

    def walk(node) -> None:
        for child in node.children:
            if isinstance(child, str):
                if not isinstance(child, _SKIP_STRINGS):
                    chunks.append(child)
                continue
            block = child.name in _BLOCK_TAGS
            if block:
                chunks.append(None)
            walk(child)
            if block:
                chunks.append(None)

    walk(soup)
    joined = "".join("\n" if c is None else re.sub(r"\s+", " ", c) for c in chunks)
    lines = (" ".join(ln.split()) for ln in joined.split("\n"))
    return "\n".join(ln for ln in lines if ln), links


# -- crawl -------------------------------------------------------------------

@dataclass(frozen=True)
class FetchError:
    kind: str
    detail: str

    def __post_init__(self):
        if self.kind not in ERROR_KINDS:
            raise ValueError(f"unknown error kind {self.kind!r}")


@dataclass(frozen=True)
class PageDocument:
    url: str
    http_status: Optional[int]
    extracted_text: str
    discovered_links: tuple[str, ...]
    fetched_at: datetime
    error: Optional[FetchError] = None
    depth: int = 0
    byte_count: int = 0
    elapsed_ms: int = 0

    def __post_init__(self):
        if self.error is not None and (self.extracted_text or self.discovered_links):
            raise ValueError("errored documents carry no text or links")

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class CrawlPlan:
    seeds: list[str]
    max_pages: int = 100
    max_depth: int = 2
    per_host_delay: float = 1.0
    pool_size: int = 8
    timeout: float = 30.0
    user_agent: str = USER_AGENT
    max_redirects: int = 5

    def __post_init__(self):
        if self.max_pages < 1 or self.pool_size < 1 or self.max_depth < 0:
            raise ValueError("max_pages and pool_size must be positive, max_depth non-negative")


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


def _is_proxy_failure(exc: BaseException) -> bool:
    import socks

    seen: set[int] = set()
    stack: list = [exc]
    while stack:
        e = stack.pop()
        if not isinstance(e, BaseException) or id(e) in seen:
            continue
        seen.add(id(e))
        if isinstance(e, socks.ProxyError):
            return True
        stack += [e.__cause__, e.__context__, getattr(e, "reason", None), *e.args]
    return False


class _Crawler:
    def __init__(self, plan: CrawlPlan, gateway: Gateway, clock: Callable[[], float], sleep):
        self.plan = plan
        self.gateway = gateway
        self.clock = clock
        self.sleep = sleep
        self.limiter = HostRateLimiter(plan.per_host_delay)
        self._host_locks: dict[str, threading.Lock] = {}
        self._robots: dict[str, str] = {}
        self._registry_lock = threading.Lock()

    def _host_lock(self, host: str) -> threading.Lock:
        with self._registry_lock:
            return self._host_locks.setdefault(host, threading.Lock())

    def _get(self, session: requests.Session, url: str, host: str) -> requests.Response:
        self.sleep(self.limiter.rate_limit_wait(host, self.clock()))
        try:
            return session.get(url, allow_redirects=False, timeout=self.plan.timeout)
        finally:
            self.limiter.complete(host, self.clock())

    def _robots_body(self, session: requests.Session, url: str, host: str) -> str:
        # caller holds the host lock
        if host not in self._robots:
            body = ""
            parts = urlsplit(normalize_url(url))
            try:
                resp = self._get(session, f"{parts.scheme}://{parts.netloc}/robots.txt", host)
                if resp.status_code == 200:
                    body = resp.text
            except requests.RequestException as exc:
                log.debug("robots.txt for %s unavailable: %s", host, exc)
            self._robots[host] = body
        return self._robots[host]

    def fetch(self, url: str, depth: int) -> PageDocument:
        started = self.clock()

        def failed(kind: str, detail: str, status: Optional[int] = None) -> PageDocument:
            return PageDocument(url, status, "", (), _utcnow(), FetchError(kind, detail), depth,
                                elapsed_ms=int((self.clock() - started) * 1000))

        try:
            route: TransportRoute = self.gateway.route(url)
        except ValueError as exc:
            return failed("transport", str(exc))
        if not self.gateway.usable(route):
            return failed("proxy", f"proxy {self.gateway.proxy} unavailable: "
                                   f"{self.gateway.probe_detail or 'not probed'}")
        host = host_key(url)
        session = self.gateway.session(route, self.plan.user_agent)
        try:
            with self._host_lock(host):
                robots = self._robots_body(session, url, host)
                current = url
                for _ in range(self.plan.max_redirects + 1):
                    if check_robots(current, robots) is RobotsVerdict.DENIED:
                        return failed("robots_denied", f"robots.txt disallows {current}")
                    resp = self._get(session, current, host)
                    if not resp.is_redirect:
                        break
                    target = normalize_url(urljoin(current, resp.headers.get("location", "")))
                    if host_key(target) != host:
                        return failed("transport", f"redirect leaves host: {target}", resp.status_code)
                    current = target
                else:
                    return failed("transport", f"more than {self.plan.max_redirects} redirects")
                body = resp.content
        except requests.Timeout as exc:
            return failed("timeout", str(exc))
        except requests.RequestException as exc:
            if route.is_dark and _is_proxy_failure(exc):
                return failed("proxy", str(exc))
            return failed("transport", str(exc))
        finally:
            session.close()

        status = resp.status_code
        if status >= 400:
            return failed("transport", f"HTTP {status}", status)
        ctype = resp.headers.get("content-type", "text/html")
        if ctype.split(";")[0].strip().lower() not in HTML_TYPES:
            return failed("non_html", f"content type {ctype}", status)
        encoding = resp.encoding if "charset" in ctype.lower() else "utf-8"
        html = body.decode(encoding or "utf-8", errors="replace")
        text, hrefs = extract_text(html)
        return PageDocument(
            url=url,
            http_status=status,
            extracted_text=text,
            discovered_links=tuple(same_host_links(current, hrefs)),
            fetched_at=_utcnow(),
            depth=depth,
            byte_count=len(body),
            elapsed_ms=int((self.clock() - started) * 1000),
        )

    def run(self) -> list[PageDocument]:
        plan = self.plan
        visited: set[str] = set()
        level: list[str] = []
        for seed in plan.seeds:
            norm = normalize_url(seed)
            if norm not in visited:
                visited.add(norm)
                level.append(norm)
        docs: list[PageDocument] = []
        depth = 0
        with ThreadPoolExecutor(max_workers=plan.pool_size, thread_name_prefix="fetch") as pool:
            while level and len(docs) < plan.max_pages:
                batch = level[: plan.max_pages - len(docs)]
                results = list(pool.map(lambda u: self.fetch(u, depth), batch))
                docs.extend(results)
                next_level = []
                if depth < plan.max_depth:
                    for doc in results:
                        for link in doc.discovered_links:
                            if link not in visited:
                                visited.add(link)
                                next_level.append(link)
                level = next_level
                depth += 1
        docs.sort(key=lambda d: normalize_url(d.url))
        return docs


def fetch_all(
    plan: CrawlPlan,
    gateway: Gateway,
    clock: Callable[[], float] = time.monotonic,
    sleep: Callable[[float], None] = time.sleep,
) -> list[PageDocument]:
    """Crawl ``plan.seeds`` and return one document per visited URL, sorted by URL."""
    return _Crawler(plan, gateway, clock, sleep).run()
