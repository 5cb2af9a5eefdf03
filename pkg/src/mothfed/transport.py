"""HTTP message types and the outbound transport abstraction.

Requests and responses are plain serialized-header-plus-body values so the
same server code runs behind a real socket or the in-process virtual network.
"""
from __future__ import annotations

import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Protocol
from urllib.parse import parse_qs, urlsplit

from .errors import TransportError


@dataclass
class HttpRequest:
    method: str
    url: str  # absolute URL; servers route on its path, transports on its host
    headers: dict[str, str] = field(default_factory=dict)
    body: bytes = b""

    @property
    def host(self) -> str:
        return urlsplit(self.url).hostname or ""

    @property
    def path(self) -> str:
        return urlsplit(self.url).path or "/"

    @property
    def target(self) -> str:
        """Request target as it appears on the request line: path[?query]."""
        parts = urlsplit(self.url)
        if parts.query:
            return f"{parts.path}?{parts.query}"
        return parts.path or "/"

    @property
    def query(self) -> dict[str, str]:
        parsed = parse_qs(urlsplit(self.url).query, keep_blank_values=True)
        return {k: v[0] for k, v in parsed.items()}

    def header(self, name: str) -> str | None:
        wanted = name.lower()
        for key, value in self.headers.items():
            if key.lower() == wanted:
                return value
        return None


@dataclass
class HttpResponse:
    status: int
    headers: dict[str, str] = field(default_factory=dict)
    body: bytes = b""

    @property
    def ok(self) -> bool:
        return 200 <= self.status < 300


class Transport(Protocol):
    """Capability for issuing outbound HTTP requests."""

    def request(self, request: HttpRequest) -> HttpResponse:
        """Deliver the request; raise TransportError if no response arrives."""
        ...


class UrllibTransport:
    """Real network transport used by the CLI (serve, probe)."""

    def __init__(self, timeout: float = 15.0):
        self.timeout = timeout

    def request(self, request: HttpRequest) -> HttpResponse:
        req = urllib.request.Request(
            request.url,
            data=request.body if request.method in ("POST", "PUT") else None,
            method=request.method,
        )
        for name, value in request.headers.items():
            if name.lower() == "host":
                continue  # urllib sets Host from the URL
            req.add_header(name, value)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return HttpResponse(
                    status=resp.status,
                    headers={k.lower(): v for k, v in resp.headers.items()},
                    body=resp.read(),
                )
        except urllib.error.HTTPError as exc:
            return HttpResponse(
                status=exc.code,
                headers={k.lower(): v for k, v in (exc.headers or {}).items()},
                body=exc.read(),
            )
        except OSError as exc:  # URLError, timeouts, DNS failures
            raise TransportError(str(exc)) from exc
