"""Handles (user@domain), WebFinger documents, and remote handle resolution."""
from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from typing import Any, Callable
from urllib.parse import quote, urlsplit

from .activitypub import ACTIVITY_MEDIA_TYPE
from .errors import MalformedHandle, NoSelfLink, ResolutionFailed
from .transport import HttpRequest, Transport, TransportError

_USERNAME_RE = re.compile(r"^[A-Za-z0-9_]+$")
_DOMAIN_RE = re.compile(
    r"^(?:[A-Za-z0-9](?:[A-Za-z0-9-]*[A-Za-z0-9])?\.)*"
    r"[A-Za-z0-9](?:[A-Za-z0-9-]*[A-Za-z0-9])?$"
)


def valid_username(name: str) -> bool:
    return bool(_USERNAME_RE.match(name))


@dataclass(frozen=True, eq=False)
class AcctHandle:
    """A user@domain pair. Comparison and hashing are case-insensitive."""

    username: str
    domain: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "domain", self.domain.lower())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AcctHandle):
            return NotImplemented
        return (
            self.username.lower() == other.username.lower()
            and self.domain == other.domain
        )

    def __hash__(self) -> int:
        return hash((self.username.lower(), self.domain))

    def __str__(self) -> str:
        return f"{self.username}@{self.domain}"

    @property
    def acct_uri(self) -> str:
        return f"acct:{self.username}@{self.domain}"


def parse_acct(text: str, local_domain: str) -> AcctHandle:
    """Parse any of @user@host, user@host, @user, user into a handle.

    Bare usernames belong to local_domain. Raises MalformedHandle for empty
    parts, bad characters, or extra @ separators.
    """
    if not isinstance(text, str):
        raise MalformedHandle("handle is not a string")
    raw = text.strip()
    if raw.lower().startswith("acct:"):
        raw = raw[5:]
    if raw.startswith("@"):
        raw = raw[1:]
    if not raw:
        raise MalformedHandle("empty handle")
    parts = raw.split("@")
    if len(parts) == 1:
        username, domain = parts[0], local_domain
    elif len(parts) == 2:
        username, domain = parts
    else:
        raise MalformedHandle(f"too many @ separators in {text!r}")
    if not username or not valid_username(username):
        raise MalformedHandle(f"bad username in {text!r}")
    domain = domain.lower()
    if not domain or not _DOMAIN_RE.match(domain):
        raise MalformedHandle(f"bad domain in {text!r}")
    if "." not in domain and domain != local_domain.lower():
        raise MalformedHandle(f"domain {domain!r} has no dot and is not local")
    return AcctHandle(username, domain)


@dataclass(frozen=True)
class JrdLink:
    rel: str
    type: str | None = None
    href: str | None = None


@dataclass(frozen=True)
class JrdDocument:
    subject: str
    aliases: tuple[str, ...] = ()
    links: tuple[JrdLink, ...] = ()

    def to_json(self) -> str:
        links = []
        for link in self.links:
            entry: dict[str, Any] = {"rel": link.rel}
            if link.type is not None:
                entry["type"] = link.type
            if link.href is not None:
                entry["href"] = link.href
            links.append(entry)
        data: dict[str, Any] = {"subject": self.subject}
        if self.aliases:
            data["aliases"] = list(self.aliases)
        data["links"] = links
        return json.dumps(data, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str | bytes) -> "JrdDocument":
        try:
            data = json.loads(text)
        except (ValueError, UnicodeDecodeError) as exc:
            raise ResolutionFailed(f"WebFinger body is not JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ResolutionFailed("WebFinger body is not a JSON object")
        subject = data.get("subject")
        if not isinstance(subject, str):
            raise ResolutionFailed("WebFinger document has no subject")
        aliases = tuple(
            a for a in data.get("aliases", []) if isinstance(a, str)
        ) if isinstance(data.get("aliases"), list) else ()
        links = []
        raw_links = data.get("links")
        if isinstance(raw_links, list):
            for item in raw_links:
                if not isinstance(item, dict):
                    continue
                rel = item.get("rel")
                if not isinstance(rel, str):
                    continue
                type_ = item.get("type")
                href = item.get("href")
                links.append(
                    JrdLink(
                        rel=rel,
                        type=type_ if isinstance(type_, str) else None,
                        href=href if isinstance(href, str) else None,
                    )
                )
        return cls(subject=subject, aliases=aliases, links=tuple(links))

    def self_link(self) -> str:
        """The actor URI advertised by this document.

        Raises NoSelfLink when no rel="self" link with an ActivityPub media
        type carries an href.
        """
        for link in self.links:
            if link.rel != "self" or link.href is None:
                continue
            if link.type is not None and "activity+json" not in link.type and "ld+json" not in link.type:
                continue
            return link.href
        raise NoSelfLink(self.subject)


def build_jrd(handle: AcctHandle, actor_uri: str, profile_url: str | None = None) -> JrdDocument:
    aliases = (actor_uri,) if profile_url is None else (profile_url, actor_uri)
    return JrdDocument(
        subject=handle.acct_uri,
        aliases=aliases,
        links=(
            JrdLink(rel="self", type=ACTIVITY_MEDIA_TYPE, href=actor_uri),
        ),
    )


@dataclass(frozen=True)
class ResolvedActorRef:
    handle: AcctHandle
    actor_uri: str
    fetched_at: float


class Resolver:
    """Turns remote handles into actor URIs via WebFinger, with a TTL cache."""

    def __init__(
        self,
        local_domain: str,
        transport: Transport,
        clock: Callable[[], float],
        ttl_seconds: float = 3600.0,
        test_mode: bool = False,
    ) -> None:
        self.local_domain = local_domain.lower()
        self.transport = transport
        self.clock = clock
        self.ttl_seconds = ttl_seconds
        self.test_mode = test_mode
        self._cache: dict[AcctHandle, ResolvedActorRef] = {}
        self._lock = threading.Lock()

    def resolve(self, handle: AcctHandle) -> ResolvedActorRef:
        if handle.domain == self.local_domain:
            raise ValueError("resolver is for remote handles only")
        now = self.clock()
        with self._lock:
            cached = self._cache.get(handle)
            if cached is not None and now - cached.fetched_at < self.ttl_seconds:
                return cached

        scheme = "http" if self.test_mode else "https"
        url = (
            f"{scheme}://{handle.domain}/.well-known/webfinger"
            f"?resource={quote(handle.acct_uri, safe='')}"
        )
        try:
            response = self.transport.request(
                HttpRequest("GET", url, {"Accept": "application/jrd+json"})
            )
        except TransportError as exc:
            raise ResolutionFailed(f"{handle}: {exc}") from exc
        if response.status != 200:
            raise ResolutionFailed(f"{handle}: WebFinger returned {response.status}")
        if not response.body:
            raise ResolutionFailed(f"{handle}: WebFinger body empty")
        document = JrdDocument.from_json(response.body)
        actor_uri = document.self_link()
        parts = urlsplit(actor_uri)
        if not self.test_mode and parts.scheme != "https":
            raise ResolutionFailed(f"{handle}: self link is not https")
        if parts.scheme not in ("http", "https") or not parts.netloc:
            raise ResolutionFailed(f"{handle}: self link is not an absolute URI")

        ref = ResolvedActorRef(handle=handle, actor_uri=actor_uri, fetched_at=now)
        with self._lock:
            self._cache[handle] = ref
        return ref

    def forget(self, handle: AcctHandle) -> None:
        with self._lock:
            self._cache.pop(handle, None)
