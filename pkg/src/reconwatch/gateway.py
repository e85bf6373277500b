"""Target classification and onion routing.

Onion hosts are only ever reached through an external SOCKS5 proxy in
domain-name mode, so the name is resolved proxy-side and never locally.
Surface hosts always go direct.
"""
from __future__ import annotations

import base64
import hashlib
import os
import re
import socket
from dataclasses import dataclass
from typing import Optional
from urllib.parse import urlsplit

import requests

DEFAULT_PROXY = "127.0.0.1:9050"
PROXY_ENV = "RECONWATCH_PROXY"

_ONION_V3 = re.compile(r"^[a-z2-7]{56}$")


class InvalidOnionAddress(ValueError):
    pass


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int

    def __str__(self) -> str:
        return f"{self.host}:{self.port}"


def parse_endpoint(value: str) -> Endpoint:
    host, sep, port = value.strip().rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 < int(port) < 65536:
        raise ValueError(f"invalid endpoint {value!r}, expected host:port")
    return Endpoint(host.strip("[]"), int(port))


def proxy_from_env(default: str = DEFAULT_PROXY) -> str:
    return os.environ.get(PROXY_ENV) or default


@dataclass(frozen=True)
class TransportRoute:
    network: str  # "surface" | "dark"
    proxy_endpoint: Optional[Endpoint] = None

    def __post_init__(self):
        if self.network not in ("surface", "dark"):
            raise ValueError(f"unknown network {self.network!r}")
        if (self.network == "dark") != (self.proxy_endpoint is not None):
            raise ValueError("dark routes need a proxy endpoint, surface routes must not have one")

    @property
    def is_dark(self) -> bool:
        return self.network == "dark"


def is_onion_host(host: str) -> bool:
    return host.lower().rstrip(".").endswith(".onion")


def _onion_checksum(pubkey: bytes, version: bytes) -> bytes:
    return hashlib.sha3_256(b".onion checksum" + pubkey + version).digest()[:2]


def onion_address(pubkey: bytes) -> str:
    """v3 onion host for a 32-byte ed25519 public key."""
    if len(pubkey) != 32:
        raise ValueError("pubkey must be 32 bytes")
    raw = pubkey + _onion_checksum(pubkey, b"\x03") + b"\x03"
    return base64.b32encode(raw).decode("ascii").lower() + ".onion"


def validate_onion_host(host: str) -> str:
    """Return the lowercased host if it is a v3 onion name, else raise.

    Besides length and alphabet, the embedded version byte and checksum are
    verified, which catches most single-character transcription errors.
    """
    host = host.lower().rstrip(".")
    label = host[: -len(".onion")].rsplit(".", 1)[-1]
    if not _ONION_V3.match(label):
        raise InvalidOnionAddress(
            f"{host!r} is not a v3 onion address (need 56 base32 characters, got {len(label)})"
        )
    raw = base64.b32decode(label.upper())
    pubkey, checksum, version = raw[:32], raw[32:34], raw[34:]
    if version != b"\x03":
        raise InvalidOnionAddress(f"{host!r}: unsupported onion version {version[0]}")
    if checksum != _onion_checksum(pubkey, version):
        raise InvalidOnionAddress(f"{host!r}: onion checksum mismatch (mistyped address?)")
    return host


def classify_target(url: str, proxy: Endpoint | str = DEFAULT_PROXY) -> TransportRoute:
    parts = urlsplit(url)
    if parts.scheme not in ("http", "https") or not parts.hostname:
        raise ValueError(f"not an absolute http(s) URL: {url!r}")
    if is_onion_host(parts.hostname):
        validate_onion_host(parts.hostname)
        if isinstance(proxy, str):
            proxy = parse_endpoint(proxy)
        return TransportRoute("dark", proxy)
    return TransportRoute("surface")


@dataclass(frozen=True)
class ProbeResult:
    status: str  # "reachable" | "unreachable"
    detail: str

    @property
    def reachable(self) -> bool:
        return self.status == "reachable"


def probe_proxy(endpoint: Endpoint | str, timeout: float = 5.0) -> ProbeResult:
    """Send a SOCKS5 no-auth greeting and check the method selection reply."""
    if isinstance(endpoint, str):
        endpoint = parse_endpoint(endpoint)
    try:
        with socket.create_connection((endpoint.host, endpoint.port), timeout=timeout) as sock:
            sock.settimeout(timeout)
            sock.sendall(b"\x05\x01\x00")
            reply = b""
            while len(reply) < 2:
                chunk = sock.recv(2 - len(reply))
                if not chunk:
                    return ProbeResult("unreachable", "protocol: connection closed during greeting")
                reply += chunk
    except ConnectionRefusedError:
        return ProbeResult("unreachable", f"refused: {endpoint}")
    except socket.timeout:
        return ProbeResult("unreachable", f"timeout: {endpoint}")
    except OSError as exc:
        return ProbeResult("unreachable", f"transport: {exc}")
    if reply[0] != 0x05:
        return ProbeResult("unreachable", f"protocol: version byte 0x{reply[0]:02x}")
    if reply[1] != 0x00:
        return ProbeResult("unreachable", f"protocol: method 0x{reply[1]:02x} rejected")
    return ProbeResult("reachable", "ok")


class Gateway:
    """Resolves URLs to routes and hands out matching HTTP sessions.

    ``proxy_available`` stays ``None`` until :meth:`probe` runs; a dark
    route is only usable once the probe has succeeded.
    """

    def __init__(self, proxy: Endpoint | str = DEFAULT_PROXY):
        self.proxy = parse_endpoint(proxy) if isinstance(proxy, str) else proxy
        self.proxy_available: Optional[bool] = None
        self.probe_detail = ""

    def route(self, url: str) -> TransportRoute:
        return classify_target(url, self.proxy)

    def probe(self, timeout: float = 5.0) -> ProbeResult:
        result = probe_proxy(self.proxy, timeout)
        self.proxy_available = result.reachable
        self.probe_detail = result.detail
        return result

    def usable(self, route: TransportRoute) -> bool:
        return not route.is_dark or bool(self.proxy_available)

    def session(self, route: TransportRoute, user_agent: str) -> requests.Session:
        s = requests.Session()
        # ignore HTTP(S)_PROXY and friends: routing is decided here only
        s.trust_env = False
        s.headers.clear()
        s.headers.update({"User-Agent": user_agent, "Accept": "text/html,*/*;q=0.1"})
        if route.is_dark:
            proxy_url = f"socks5h://{route.proxy_endpoint}"
            s.proxies = {"http": proxy_url, "https": proxy_url}
        return s
