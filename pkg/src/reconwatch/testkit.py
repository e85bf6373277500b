"""Offline test apparatus: a fixture HTTP server and a mock SOCKS5 proxy.

Both bind to loopback, handle connections on threads, and keep
append-only logs that tests inspect afterwards.
"""
from __future__ import annotations

import html
import logging
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

log = logging.getLogger(__name__)

# onion host of the Q&A forum used in all three field scenarios
QUERY_ONION = "ruc4i7xn5qu5uc7fu2sc34r6xl55xhgvxbcs56t4ayvbqo2fmp4pehqd.onion"

SCENARIO1_NAME = "Sheila Santiesteban"
SCENARIO1_EMAIL = "sheila.emili@yahoo.com"
SCENARIO2_EMAIL = "arthurwelk83@whalebank.org"
SCENARIO3_PHRASE = "Onion Links that share data leaks for FREE"
SCENARIO3_BODY_TERM = "mirror archive listing"
SCENARIO3_CONTENT_PAGES = 57
SCENARIO3_TITLE_ONLY = 12
SCENARIO3_PAGINATION = 10


@dataclass(frozen=True)
class FixturePage:
    body: str
    content_type: str = "text/html; charset=utf-8"
    status: int = 200
    # "drop": advertise the full length, send half the body, then close
    behavior: str = "normal"
    headers: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class AccessRecord:
    timestamp: float  # time.monotonic()
    path: str
    headers: dict


@dataclass
class FixtureCorpus:
    pages: dict[str, FixturePage] = field(default_factory=dict)
    robots: Optional[str] = None
    access_log: list[AccessRecord] = field(default_factory=list)

    def __post_init__(self):
        self._lock = threading.Lock()

    def record(self, path: str, headers: dict) -> None:
        with self._lock:
            self.access_log.append(AccessRecord(time.monotonic(), path, headers))

    def requested_paths(self) -> list[str]:
        with self._lock:
            return [r.path for r in self.access_log]

    @classmethod
    def from_directory(cls, directory: Path | str) -> "FixtureCorpus":
        """``index.html`` serves ``/``, other files serve their relative path."""
        directory = Path(directory)
        corpus = cls()
        for path in sorted(directory.rglob("*")):
            if not path.is_file():
                continue
            rel = path.relative_to(directory).as_posix()
            if rel == "robots.txt":
                corpus.robots = path.read_text(encoding="utf-8")
                continue
            ctype = "text/html; charset=utf-8" if path.suffix in (".html", ".htm") else "application/octet-stream"
            body = path.read_text(encoding="utf-8", errors="replace")
            corpus.pages["/" + rel] = FixturePage(body, ctype)
            if rel.endswith("index.html"):
                corpus.pages["/" + rel[: -len("index.html")]] = FixturePage(body, ctype)
        return corpus


class _FixtureHandler(BaseHTTPRequestHandler):
    server_version = "fixture/1.0"
    protocol_version = "HTTP/1.0"

    def log_message(self, format, *args):
        log.debug("fixture: " + format, *args)

    def do_GET(self):
        corpus: FixtureCorpus = self.server.corpus
        corpus.record(self.path, dict(self.headers.items()))
        if self.path == "/robots.txt" and corpus.robots is not None:
            page = FixturePage(corpus.robots, "text/plain; charset=utf-8")
        else:
            page = corpus.pages.get(self.path)
        if page is None:
            page = FixturePage("<h1>not found</h1>", status=404)
        body = page.body.encode("utf-8")
        self.send_response(page.status)
        self.send_header("Content-Type", page.content_type)
        for k, v in page.headers:
            self.send_header(k, v)
        if page.behavior == "drop":
            self.send_header("Content-Length", str(len(body) + 4096))
            self.end_headers()
            self.wfile.write(body[: len(body) // 2])
            self.wfile.flush()
            self.close_connection = True
            self.connection.shutdown(socket.SHUT_RDWR)
            return
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True


class ServerHandle:
    def __init__(self, server, thread: threading.Thread):
        self._server = server
        self._thread = thread
        self.host, self.port = server.server_address[:2]

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}/"

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _start(server) -> threading.Thread:
    t = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
    t.start()
    return t


def serve(corpus: FixtureCorpus, bind: tuple[str, int] = ("127.0.0.1", 0)) -> ServerHandle:
    server = _Server(bind, _FixtureHandler)
    server.corpus = corpus
    return ServerHandle(server, _start(server))


# -- mock SOCKS5 -------------------------------------------------------------

@dataclass(frozen=True)
class ConnectRecord:
    timestamp: float
    atyp: int
    host: str
    port: int
    accepted: bool
    note: str = ""


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    data = b""
    while len(data) < n:
        chunk = sock.recv(n - len(data))
        if not chunk:
            raise ConnectionError("unexpected EOF")
        data += chunk
    return data


def _reply(code: int) -> bytes:
    return b"\x05" + bytes([code]) + b"\x00\x01" + socket.inet_aton("0.0.0.0") + struct.pack("!H", 0)


class _SocksHandler(socketserver.BaseRequestHandler):
    def handle(self):
        srv: _SocksServer = self.server
        conn: socket.socket = self.request
        try:
            ver, nmethods = _recv_exact(conn, 2)
            methods = _recv_exact(conn, nmethods)
            if ver != 0x05:
                srv.log(ConnectRecord(time.monotonic(), 0, "", 0, False, f"bad version 0x{ver:02x}"))
                return
            if 0x00 not in methods:
                srv.log(ConnectRecord(time.monotonic(), 0, "", 0, False, "no acceptable method"))
                conn.sendall(b"\x05\xff")
                return
            conn.sendall(b"\x05\x00")
            try:
                ver, cmd, _rsv, atyp = _recv_exact(conn, 4)
            except ConnectionError:
                return  # greeting-only probe
            if atyp == 0x01:
                host = socket.inet_ntoa(_recv_exact(conn, 4))
            elif atyp == 0x04:
                host = socket.inet_ntop(socket.AF_INET6, _recv_exact(conn, 16))
            elif atyp == 0x03:
                host = _recv_exact(conn, _recv_exact(conn, 1)[0]).decode("ascii", "replace")
            else:
                srv.log(ConnectRecord(time.monotonic(), atyp, "", 0, False, "unknown address type"))
                conn.sendall(_reply(0x08))
                return
            port = struct.unpack("!H", _recv_exact(conn, 2))[0]
            if cmd != 0x01:
                srv.log(ConnectRecord(time.monotonic(), atyp, host, port, False, "command not supported"))
                conn.sendall(_reply(0x07))
                return
            if atyp != 0x03:
                # resolution must happen proxy-side: only domain-name CONNECTs
                srv.log(ConnectRecord(time.monotonic(), atyp, host, port, False, "address type refused"))
                conn.sendall(_reply(0x08))
                return
            if not host.lower().endswith(".onion"):
                srv.log(ConnectRecord(time.monotonic(), atyp, host, port, False, "not an onion host"))
                conn.sendall(_reply(0x04))
                return
            try:
                upstream = socket.create_connection(srv.upstream, timeout=10)
            except OSError as exc:
                srv.log(ConnectRecord(time.monotonic(), atyp, host, port, False, f"upstream: {exc}"))
                conn.sendall(_reply(0x05))
                return
            srv.log(ConnectRecord(time.monotonic(), atyp, host, port, True))
            conn.sendall(_reply(0x00))
            with upstream:
                _relay(conn, upstream)
        except (ConnectionError, OSError, ValueError) as exc:
            srv.log(ConnectRecord(time.monotonic(), 0, "", 0, False, f"malformed: {exc}"))


def _relay(a: socket.socket, b: socket.socket) -> None:
    def pump(src, dst):
        try:
            while True:
                data = src.recv(65536)
                if not data:
                    break
                dst.sendall(data)
        except OSError:
            pass
        finally:
            try:
                dst.shutdown(socket.SHUT_WR)
            except OSError:
                pass

    t = threading.Thread(target=pump, args=(b, a), daemon=True)
    t.start()
    pump(a, b)
    t.join(timeout=30)


class _SocksServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, bind, upstream):
        super().__init__(bind, _SocksHandler)
        self.upstream = upstream
        self.connect_log: list[ConnectRecord] = []
        self._lock = threading.Lock()

    def log(self, record: ConnectRecord) -> None:
        with self._lock:
            self.connect_log.append(record)


class ProxyHandle(ServerHandle):
    @property
    def connect_log(self) -> list[ConnectRecord]:
        with self._server._lock:
            return list(self._server.connect_log)

    @property
    def accepted(self) -> list[ConnectRecord]:
        return [r for r in self.connect_log if r.accepted]


def mock_socks5(upstream: tuple[str, int], bind: tuple[str, int] = ("127.0.0.1", 0)) -> ProxyHandle:
    """SOCKS5 proxy that tunnels every ``.onion`` CONNECT to ``upstream``."""
    server = _SocksServer(bind, upstream)
    return ProxyHandle(server, _start(server))


# -- scenario corpora --------------------------------------------------------

def _page(title: str, body_html: str) -> str:
    return (
        "<!DOCTYPE html><html><head><meta charset='utf-8'>"
        f"<title>{html.escape(title)}</title>"
        "<style>body{font-family:sans-serif}</style></head>"
        f"<body><nav><a href='/'>Query</a></nav>{body_html}"
        "<script>var tracker = 1;</script></body></html>"
    )


def build_scenario1_corpus() -> FixtureCorpus:
    """Q&A forum page where a name and an email leak together."""
    pages = {
        "/": FixturePage(_page("Query", "<h1>Recent questions</h1>"
                                        "<ul><li><a href='/?dwqa-question=customer-export'>customer export</a></li>"
                                        "<li><a href='/?dwqa-question=vpn-help'>vpn help</a></li></ul>")),
        "/?dwqa-question=customer-export": FixturePage(_page(
            "customer export",
            "<h1>customer export from travel agency</h1>"
            "<table><tr><th>name</th><th>email</th></tr>"
            f"<tr><td>{SCENARIO1_NAME}</td><td>{SCENARIO1_EMAIL}</td></tr>"
            "<tr><td>Marcus Oyelaran</td><td>m.oyelaran@example.net</td></tr></table>",
        )),
        "/?dwqa-question=vpn-help": FixturePage(_page(
            "vpn help", f"<p>anyone know {SCENARIO1_NAME}? asking for a friend</p>")),
    }
    return FixtureCorpus(pages)


def build_scenario2_corpus() -> FixtureCorpus:
    """Gist-like paste service with one paste exposing an email address."""
    pages = {
        "/": FixturePage(_page("Discover gists", "<h1>Discover gists</h1>"
                                                 "<a href='/u7/3f9a2c'>config.txt</a> "
                                                 "<a href='/u9/88d1e0'>notes.md</a>")),
        "/u7/3f9a2c": FixturePage(_page("config.txt", "<pre>smtp_user = "
                                                      f"{SCENARIO2_EMAIL}\nsmtp_host = mail.local</pre>")),
        "/u9/88d1e0": FixturePage(_page("notes.md", "<p>todo: rotate keys</p>")),
    }
    return FixtureCorpus(pages)


def scenario3_slug() -> str:
    return "onion-links-that-share-data-leaks-for-free"


def build_scenario3_corpus() -> FixtureCorpus:
    """Forum index linking 79 threads that all carry the search phrase.

    57 threads have real content, and only they contain
    ``SCENARIO3_BODY_TERM``. The other 22 are false positives: 12
    title-only threads and 10 extra pagination pages of one thread.
    """
    slug = scenario3_slug()
    pages: dict[str, FixturePage] = {}
    links: list[str] = []

    for i in range(1, SCENARIO3_CONTENT_PAGES + 1):
        path = f"/?dwqa-question={slug}-{i}"
        links.append(path)
        pages[path] = FixturePage(_page(
            f"thread {i}",
            f"<h1>{SCENARIO3_PHRASE}</h1>"
            f"<div class='post'><p>Posted by user{i:03d}. Fresh {SCENARIO3_BODY_TERM} #{i}:</p>"
            f"<ul><li>dump-{i:03d}a.zip (password in comments)</li><li>dump-{i:03d}b.zip</li></ul>"
            f"<p>Sector tag {['retail', 'health', 'finance'][i % 3]}, batch {i * 37 % 101}.</p></div>",
        ))
    for i in range(1, SCENARIO3_TITLE_ONLY + 1):
        path = f"/?dwqa-question={slug}-empty-{i}"
        links.append(path)
        pages[path] = FixturePage(_page(f"empty thread {i}", f"<h1>{SCENARIO3_PHRASE}</h1><p></p>"))
    for n in range(2, SCENARIO3_PAGINATION + 2):
        path = f"/?dwqa-question={slug}&page={n}"
        links.append(path)
        prev = f"/?dwqa-question={slug}&page={n - 1}" if n > 2 else f"/?dwqa-question={slug}-1"
        pages[path] = FixturePage(_page(
            f"page {n}",
            f"<h1>{SCENARIO3_PHRASE}</h1><p>page {n}</p><a href='{html.escape(prev)}'>previous</a>",
        ))

    items = "".join(f"<li><a href='{html.escape(p)}'>thread {k:02d}</a></li>" for k, p in enumerate(links, 1))
    pages["/"] = FixturePage(_page("Query - questions", f"<h1>Questions</h1><ul>{items}</ul>"))
    return FixtureCorpus(pages)
