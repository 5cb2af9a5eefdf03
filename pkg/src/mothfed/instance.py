"""One server instance: config + storage + federation engine + resolver.

InstanceNode is transport-agnostic; handle_http serves any HttpRequest, so
the same node runs behind a real socket server or the in-process virtual
network. All time flows through the injected clock.
"""
from __future__ import annotations

import secrets
import threading
import time
from datetime import datetime, timezone
from typing import Callable

from .activitypub import ACTIVITY_MEDIA_TYPE, Actor, uri_host, validate_actor_document
from .config import Config
from .errors import ActorFetchFailed, InvalidName, NameTaken, ResolutionFailed, UnknownUser
from .federation import FederationEngine, QueueReport
from .http_api import HttpApi
from .httpsig import generate_rsa_keypair
from .identity import AcctHandle, Resolver, valid_username
from .mastodon import Account, account_to_actor, actor_to_account
from .storage import MemoryStore, open_store
from .transport import HttpRequest, HttpResponse, Transport, TransportError, UrllibTransport


class InstanceNode:
    def __init__(
        self,
        config: Config,
        store: MemoryStore | None = None,
        transport: Transport | None = None,
        clock: Callable[[], float] | None = None,
    ) -> None:
        self.config = config.validate()
        self.store = store if store is not None else open_store(
            config.storage_backend, config.storage_path
        )
        self.transport = transport if transport is not None else UrllibTransport()
        self.clock = clock if clock is not None else time.time
        self.resolver = Resolver(
            local_domain=config.domain,
            transport=self.transport,
            clock=self.clock,
            ttl_seconds=config.resolve_ttl_seconds,
            test_mode=config.test_mode,
        )
        self.engine = FederationEngine(config, self.store, self.clock)
        self._actor_cache: dict[str, tuple[Actor, float]] = {}
        self._actor_cache_lock = threading.Lock()
        self.api = HttpApi(self)

    # --- conveniences ---------------------------------------------------------

    @property
    def domain(self) -> str:
        return self.config.domain

    @property
    def base_url(self) -> str:
        return self.config.base_url

    def now_dt(self) -> datetime:
        return datetime.fromtimestamp(self.clock(), tz=timezone.utc)

    def actor_uri_for(self, username: str) -> str:
        return f"{self.base_url}/users/{username}"

    def status_uri_for(self, username: str, status_id: int) -> str:
        return f"{self.base_url}/users/{username}/statuses/{status_id}"

    def handle_http(self, request: HttpRequest) -> HttpResponse:
        return self.api.handle(request)

    # --- users ----------------------------------------------------------------

    def create_user(self, username: str, token: str | None = None) -> tuple[Account, str]:
        if not valid_username(username):
            raise InvalidName(username)
        if self.store.get_local_account(username) is not None:
            raise NameTaken(username)
        private_pem, public_pem = generate_rsa_keypair(self.config.key_bits)
        actor_uri = self.actor_uri_for(username)
        account = self.store.upsert_account(
            Account(
                id=None,
                username=username,
                acct=username,
                display_name="",
                actor_uri=actor_uri,
                inbox_uri=f"{actor_uri}/inbox",
                public_key_pem=public_pem,
                created_at=self.now_dt(),
            )
        )
        assert account.id is not None
        self.store.save_keypair(username, private_pem, public_pem)
        issued = token if token is not None else secrets.token_hex(16)
        self.store.save_token(account.id, issued)
        return account, issued

    def ensure_user(self, username: str, token: str | None = None) -> tuple[Account, str]:
        """create_user, or the existing account with its stored token."""
        existing = self.store.get_local_account(username)
        if existing is None:
            return self.create_user(username, token)
        assert existing.id is not None
        stored_token = self.store.token_for_account(existing.id)
        if stored_token is None:
            stored_token = token if token is not None else secrets.token_hex(16)
            self.store.save_token(existing.id, stored_token)
        return existing, stored_token

    def account_for_token(self, token: str) -> Account | None:
        account_id = self.store.account_id_for_token(token)
        return self.store.get_account(account_id) if account_id is not None else None

    def delete_local_account(self, username: str) -> dict[str, int]:
        account = self.store.get_local_account(username)
        if account is None:
            raise UnknownUser(username)
        # Announce first: fan-out needs the peers table and the account row,
        # and the retained keypair signs the queued tasks later.
        tasks = self.engine.propagate_delete(account)
        report = self.store.delete_account_data(account.actor_uri)
        report["deliveries"] = len(tasks)
        return report

    # --- remote actors ----------------------------------------------------------

    def fetch_actor(self, actor_uri: str) -> Actor:
        """Actor document for a URI, via cache, local store, or the network."""
        uri = actor_uri.split("#", 1)[0]
        now = self.clock()
        with self._actor_cache_lock:
            cached = self._actor_cache.get(uri)
            if cached is not None and now - cached[1] < self.config.resolve_ttl_seconds:
                return cached[0]

        if uri_host(uri).lower() == self.domain.lower():
            account = self.store.get_account_by_uri(uri)
            if account is None or account.is_remote:
                raise ActorFetchFailed(f"no local actor at {uri}")
            return account_to_actor(account, self.base_url)

        try:
            response = self.transport.request(
                HttpRequest("GET", uri, {"Accept": ACTIVITY_MEDIA_TYPE})
            )
        except TransportError as exc:
            raise ActorFetchFailed(f"{uri}: {exc}") from exc
        if response.status != 200:
            raise ActorFetchFailed(f"{uri}: actor endpoint returned {response.status}")
        if not response.body:
            raise ActorFetchFailed(f"{uri}: actor endpoint returned an empty body")
        try:
            actor = validate_actor_document(response.body)
        except Exception as exc:
            raise ActorFetchFailed(f"{uri}: invalid actor document: {exc}") from exc
        if actor.id != uri:
            raise ActorFetchFailed(f"{uri}: document claims to be {actor.id}")

        with self._actor_cache_lock:
            self._actor_cache[uri] = (actor, now)
        return actor

    def forget_actor(self, actor_uri: str) -> None:
        with self._actor_cache_lock:
            self._actor_cache.pop(actor_uri.split("#", 1)[0], None)

    def resolve_account(self, handle: AcctHandle) -> Account:
        """Remote handle -> fetched actor -> stored account row."""
        ref = self.resolver.resolve(handle)
        if self.store.is_tombstoned(ref.actor_uri):
            raise ResolutionFailed(f"{handle}: actor was deleted")
        try:
            actor = self.fetch_actor(ref.actor_uri)
        except ActorFetchFailed as exc:
            raise ResolutionFailed(str(exc)) from exc
        account = self.store.upsert_account(
            actor_to_account(actor, self.domain, self.now_dt())
        )
        domain = uri_host(actor.id)
        if domain and domain.lower() != self.domain.lower():
            self.store.record_peer(domain.lower(), actor.inbox)
        return account

    # --- delivery --------------------------------------------------------------

    def process_deliveries(self, now: float | None = None) -> QueueReport:
        return self.engine.process_queue(
            self.clock() if now is None else now, self.transport
        )

    def pending_deliveries(self) -> int:
        return self.store.pending_count()

    def next_pending_time(self) -> float | None:
        return self.store.next_pending_time()

    def close(self) -> None:
        self.store.close()
