"""Persistence for accounts, statuses, follows, timelines, peers, keys, tasks.

Two backends share one implementation: MemoryStore holds everything in
indexed dicts under a single lock, and FileStore layers write-through JSON
persistence on top so a process kill never loses a committed record. The two
are observationally equivalent; FileStore only adds durability.

File layout under the root path:
    counters.json             id sequences
    accounts/{id}.json        one account per file
    statuses/{id}.json
    follows/{id}.json
    interactions/{id}.json
    tasks/{id}.json
    timelines.jsonl           append-only; rewritten on deletes
    seen.log                  append-only activity ids
    tombstones.log            append-only actor URIs
    peers.json                domain -> inbox hint
    tokens.json               account id -> bearer token
    keys/{user}.pem,.pub.pem  PEM keypairs (private file mode 0600)
"""
from __future__ import annotations

import json
import os
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable

from .errors import DuplicateUri, StorageUnavailable, TombstonedActor, UnknownAccount
from .federation import DeliveryTask, FollowRelation, Interaction
from .mastodon import Account, Mention, Status, Visibility

MAX_PAGE = 40


def _dt_to_text(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).isoformat()


def _dt_from_text(text: str) -> datetime:
    return datetime.fromisoformat(text).astimezone(timezone.utc)


def account_record(account: Account) -> dict[str, Any]:
    return {
        "id": account.id,
        "username": account.username,
        "acct": account.acct,
        "display_name": account.display_name,
        "actor_uri": account.actor_uri,
        "inbox_uri": account.inbox_uri,
        "public_key_pem": account.public_key_pem,
        "created_at": _dt_to_text(account.created_at),
    }


def account_from_record(data: dict[str, Any]) -> Account:
    return Account(
        id=data["id"],
        username=data["username"],
        acct=data["acct"],
        display_name=data["display_name"],
        actor_uri=data["actor_uri"],
        inbox_uri=data["inbox_uri"],
        public_key_pem=data["public_key_pem"],
        created_at=_dt_from_text(data["created_at"]),
    )


def status_record(status: Status) -> dict[str, Any]:
    return {
        "id": status.id,
        "uri": status.uri,
        "content": status.content,
        "account_id": status.account_id,
        "visibility": status.visibility.value,
        "mentions": [{"acct": m.acct, "actor_uri": m.actor_uri} for m in status.mentions],
        "tags": list(status.tags),
        "created_at": _dt_to_text(status.created_at),
        "in_reply_to_id": status.in_reply_to_id,
    }


def status_from_record(data: dict[str, Any]) -> Status:
    return Status(
        id=data["id"],
        uri=data["uri"],
        content=data["content"],
        account_id=data["account_id"],
        visibility=Visibility(data["visibility"]),
        mentions=tuple(Mention(m["acct"], m["actor_uri"]) for m in data["mentions"]),
        tags=tuple(data["tags"]),
        created_at=_dt_from_text(data["created_at"]),
        in_reply_to_id=data.get("in_reply_to_id"),
    )


def follow_record(relation: FollowRelation) -> dict[str, Any]:
    return {
        "id": relation.id,
        "follower_actor_uri": relation.follower_actor_uri,
        "followee_account_id": relation.followee_account_id,
        "state": relation.state,
        "follow_activity_id": relation.follow_activity_id,
        "created_at": relation.created_at,
    }


def follow_from_record(data: dict[str, Any]) -> FollowRelation:
    return FollowRelation(
        id=data["id"],
        follower_actor_uri=data["follower_actor_uri"],
        followee_account_id=data["followee_account_id"],
        state=data["state"],
        follow_activity_id=data["follow_activity_id"],
        created_at=data["created_at"],
    )


def interaction_record(item: Interaction) -> dict[str, Any]:
    return {
        "id": item.id,
        "kind": item.kind,
        "actor_uri": item.actor_uri,
        "object_uri": item.object_uri,
        "activity_id": item.activity_id,
        "created_at": item.created_at,
    }


def interaction_from_record(data: dict[str, Any]) -> Interaction:
    return Interaction(
        id=data["id"],
        kind=data["kind"],
        actor_uri=data["actor_uri"],
        object_uri=data["object_uri"],
        activity_id=data["activity_id"],
        created_at=data["created_at"],
    )


def task_record(task: DeliveryTask) -> dict[str, Any]:
    return {
        "task_id": task.task_id,
        "activity_body": task.activity_body,
        "target_inbox": task.target_inbox,
        "key_id": task.key_id,
        "created_at": task.created_at,
        "next_attempt_at": task.next_attempt_at,
        "attempts": task.attempts,
        "terminal": task.terminal,
        "result": task.result,
    }


def task_from_record(data: dict[str, Any]) -> DeliveryTask:
    return DeliveryTask(
        task_id=data["task_id"],
        activity_body=data["activity_body"],
        target_inbox=data["target_inbox"],
        key_id=data["key_id"],
        created_at=data["created_at"],
        next_attempt_at=data["next_attempt_at"],
        attempts=data["attempts"],
        terminal=data["terminal"],
        result=data.get("result"),
    )


class MemoryStore:
    """In-memory backend; all operations are safe under concurrent callers."""

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._accounts: dict[int, Account] = {}
        self._account_by_uri: dict[str, int] = {}
        self._statuses: dict[int, Status] = {}
        self._status_by_uri: dict[str, int] = {}
        self._tag_index: dict[str, list[int]] = {}
        # owner account id -> {status id -> inserted_at}
        self._timelines: dict[int, dict[int, float]] = {}
        self._follows: dict[int, FollowRelation] = {}
        self._follow_by_pair: dict[tuple[str, int], int] = {}
        self._follow_by_activity: dict[str, int] = {}
        self._interactions: dict[int, Interaction] = {}
        self._interaction_by_key: dict[tuple[str, str, str], int] = {}
        self._interaction_by_activity: dict[str, int] = {}
        self._peers: dict[str, str | None] = {}
        self._seen: set[str] = set()
        self._tombstones: set[str] = set()
        self._keys: dict[str, tuple[str, str]] = {}
        self._tokens: dict[str, int] = {}
        self._token_by_account: dict[int, str] = {}
        self._tasks: dict[int, DeliveryTask] = {}
        self._counters: dict[str, int] = {}

    # --- sequences ---------------------------------------------------------

    def next_sequence(self, name: str) -> int:
        with self._lock:
            value = self._counters.get(name, 0) + 1
            self._counters[name] = value
            self._persist_counters()
            return value

    def next_status_id(self, now: float) -> int:
        """Time-ordered unique id: epoch-microseconds floor, strictly rising."""
        with self._lock:
            candidate = int(now * 1000) * 1000
            last = self._counters.get("status_id", 0)
            value = max(candidate, last + 1)
            self._counters["status_id"] = value
            self._persist_counters()
            return value

    # --- accounts ------------------------------------------------------------

    def upsert_account(self, account: Account) -> Account:
        with self._lock:
            existing_id = self._account_by_uri.get(account.actor_uri)
            if existing_id is not None:
                previous = self._accounts[existing_id]
                stored = Account(
                    id=existing_id,
                    username=account.username,
                    acct=account.acct,
                    display_name=account.display_name,
                    actor_uri=account.actor_uri,
                    inbox_uri=account.inbox_uri,
                    public_key_pem=account.public_key_pem,
                    created_at=previous.created_at,
                )
            else:
                new_id = account.id if account.id is not None else self.next_sequence("account")
                stored = Account(
                    id=new_id,
                    username=account.username,
                    acct=account.acct,
                    display_name=account.display_name,
                    actor_uri=account.actor_uri,
                    inbox_uri=account.inbox_uri,
                    public_key_pem=account.public_key_pem,
                    created_at=account.created_at,
                )
            assert stored.id is not None
            self._accounts[stored.id] = stored
            self._account_by_uri[stored.actor_uri] = stored.id
            self._persist_account(stored)
            return stored

    def get_account(self, account_id: int) -> Account | None:
        with self._lock:
            return self._accounts.get(account_id)

    def get_account_by_uri(self, actor_uri: str) -> Account | None:
        with self._lock:
            account_id = self._account_by_uri.get(actor_uri)
            return self._accounts.get(account_id) if account_id is not None else None

    def get_local_account(self, username: str) -> Account | None:
        wanted = username.lower()
        with self._lock:
            for account in self._accounts.values():
                if not account.is_remote and account.username.lower() == wanted:
                    return account
            return None

    def local_accounts(self) -> list[Account]:
        with self._lock:
            return sorted(
                (a for a in self._accounts.values() if not a.is_remote),
                key=lambda a: a.id or 0,
            )

    # --- statuses ------------------------------------------------------------

    def store_status(self, status: Status) -> Status:
        with self._lock:
            if status.uri in self._tombstones:
                raise TombstonedActor(status.uri)
            author = self._accounts.get(status.account_id)
            if author is not None and author.actor_uri in self._tombstones:
                raise TombstonedActor(author.actor_uri)
            if status.uri and status.uri in self._status_by_uri:
                raise DuplicateUri(status.uri)
            status_id = status.id
            if status_id is None:
                status_id = self.next_status_id(status.created_at.timestamp())
            stored = Status(
                id=status_id,
                uri=status.uri,
                content=status.content,
                account_id=status.account_id,
                visibility=status.visibility,
                mentions=status.mentions,
                tags=status.tags,
                created_at=status.created_at,
                in_reply_to_id=status.in_reply_to_id,
            )
            self._statuses[status_id] = stored
            if stored.uri:
                self._status_by_uri[stored.uri] = status_id
            for tag in stored.tags:
                self._tag_index.setdefault(tag, []).append(status_id)
            self._persist_status(stored)
            return stored

    def get_status(self, status_id: int) -> Status | None:
        with self._lock:
            return self._statuses.get(status_id)

    def get_status_by_uri(self, uri: str) -> Status | None:
        with self._lock:
            status_id = self._status_by_uri.get(uri)
            return self._statuses.get(status_id) if status_id is not None else None

    def statuses_by_account(self, account_id: int) -> list[Status]:
        with self._lock:
            found = [s for s in self._statuses.values() if s.account_id == account_id]
            return sorted(found, key=lambda s: s.id or 0, reverse=True)

    # --- timelines -------------------------------------------------------------

    def insert_timeline_entry(self, owner_id: int, status_id: int, now: float) -> bool:
        with self._lock:
            timeline = self._timelines.setdefault(owner_id, {})
            if status_id in timeline:
                return False
            timeline[status_id] = now
            self._persist_timeline_append(owner_id, status_id, now)
            return True

    def _permitted(self, owner: Account, status: Status) -> bool:
        if status.account_id == owner.id:
            return True
        if any(m.actor_uri == owner.actor_uri for m in status.mentions):
            return True
        if status.visibility in (Visibility.PUBLIC, Visibility.FOLLOWERS):
            author = self._accounts.get(status.account_id)
            if author is None or author.id is None:
                return False
            follow_id = self._follow_by_pair.get((owner.actor_uri, author.id))
            if follow_id is not None and self._follows[follow_id].state == "accepted":
                return True
        return False

    def query_home_timeline(
        self, account_id: int, limit: int = 20, max_id: int | None = None
    ) -> list[Status]:
        limit = max(1, min(int(limit), MAX_PAGE))
        with self._lock:
            owner = self._accounts.get(account_id)
            if owner is None:
                raise UnknownAccount(str(account_id))
            candidates = sorted(self._timelines.get(account_id, {}), reverse=True)
            results = []
            for status_id in candidates:
                if max_id is not None and status_id >= max_id:
                    continue
                status = self._statuses.get(status_id)
                if status is None:
                    continue
                if not self._permitted(owner, status):
                    continue
                results.append(status)
                if len(results) == limit:
                    break
            return results

    def query_tag_timeline(
        self, tag: str, limit: int = 20, max_id: int | None = None
    ) -> list[Status]:
        limit = max(1, min(int(limit), MAX_PAGE))
        with self._lock:
            ids = sorted(self._tag_index.get(tag, ()), reverse=True)
            results = []
            for status_id in ids:
                if max_id is not None and status_id >= max_id:
                    continue
                status = self._statuses.get(status_id)
                if status is None or status.visibility is not Visibility.PUBLIC:
                    continue
                results.append(status)
                if len(results) == limit:
                    break
            return results

    # --- follows ----------------------------------------------------------------

    def upsert_follow(
        self,
        follower_actor_uri: str,
        followee_account_id: int,
        state: str,
        follow_activity_id: str,
        created_at: float,
    ) -> FollowRelation:
        with self._lock:
            pair = (follower_actor_uri, followee_account_id)
            existing_id = self._follow_by_pair.get(pair)
            if existing_id is not None:
                previous = self._follows[existing_id]
                if previous.follow_activity_id != follow_activity_id:
                    self._follow_by_activity.pop(previous.follow_activity_id, None)
                relation = FollowRelation(
                    id=existing_id,
                    follower_actor_uri=follower_actor_uri,
                    followee_account_id=followee_account_id,
                    state=state,
                    follow_activity_id=follow_activity_id,
                    created_at=previous.created_at,
                )
            else:
                relation = FollowRelation(
                    id=self.next_sequence("follow"),
                    follower_actor_uri=follower_actor_uri,
                    followee_account_id=followee_account_id,
                    state=state,
                    follow_activity_id=follow_activity_id,
                    created_at=created_at,
                )
            self._follows[relation.id] = relation
            self._follow_by_pair[pair] = relation.id
            if relation.follow_activity_id:
                self._follow_by_activity[relation.follow_activity_id] = relation.id
            self._persist_follow(relation)
            return relation

    def set_follow_state(self, follow_id: int, state: str) -> FollowRelation | None:
        with self._lock:
            relation = self._follows.get(follow_id)
            if relation is None:
                return None
            updated = FollowRelation(
                id=relation.id,
                follower_actor_uri=relation.follower_actor_uri,
                followee_account_id=relation.followee_account_id,
                state=state,
                follow_activity_id=relation.follow_activity_id,
                created_at=relation.created_at,
            )
            self._follows[follow_id] = updated
            self._persist_follow(updated)
            return updated

    def get_follow(self, follower_actor_uri: str, followee_account_id: int) -> FollowRelation | None:
        with self._lock:
            follow_id = self._follow_by_pair.get((follower_actor_uri, followee_account_id))
            return self._follows.get(follow_id) if follow_id is not None else None

    def find_follow_by_activity(self, activity_id: str) -> FollowRelation | None:
        with self._lock:
            follow_id = self._follow_by_activity.get(activity_id)
            return self._follows.get(follow_id) if follow_id is not None else None

    def remove_follow(self, follow_id: int) -> bool:
        with self._lock:
            relation = self._follows.pop(follow_id, None)
            if relation is None:
                return False
            self._follow_by_pair.pop(
                (relation.follower_actor_uri, relation.followee_account_id), None
            )
            self._follow_by_activity.pop(relation.follow_activity_id, None)
            self._persist_follow_removal(follow_id)
            return True

    def followers_of(self, account_id: int, state: str | None = "accepted") -> list[FollowRelation]:
        with self._lock:
            found = [
                r
                for r in self._follows.values()
                if r.followee_account_id == account_id
                and (state is None or r.state == state)
            ]
            return sorted(found, key=lambda r: r.id)

    def follows_by_follower(self, follower_actor_uri: str) -> list[FollowRelation]:
        with self._lock:
            found = [
                r for r in self._follows.values() if r.follower_actor_uri == follower_actor_uri
            ]
            return sorted(found, key=lambda r: r.id)

    # --- interactions -------------------------------------------------------------

    def record_interaction(
        self, kind: str, actor_uri: str, object_uri: str, activity_id: str, created_at: float
    ) -> bool:
        with self._lock:
            key = (kind, actor_uri, object_uri)
            if key in self._interaction_by_key:
                return False
            item = Interaction(
                id=self.next_sequence("interaction"),
                kind=kind,
                actor_uri=actor_uri,
                object_uri=object_uri,
                activity_id=activity_id,
                created_at=created_at,
            )
            self._interactions[item.id] = item
            self._interaction_by_key[key] = item.id
            if activity_id:
                self._interaction_by_activity[activity_id] = item.id
            self._persist_interaction(item)
            return True

    def restore_interaction(self, item: Interaction) -> None:
        with self._lock:
            self._interactions[item.id] = item
            self._interaction_by_key[(item.kind, item.actor_uri, item.object_uri)] = item.id
            if item.activity_id:
                self._interaction_by_activity[item.activity_id] = item.id
            self._persist_interaction(item)

    def remove_interaction_by_activity(self, activity_id: str) -> Interaction | None:
        with self._lock:
            item_id = self._interaction_by_activity.get(activity_id)
            if item_id is None:
                return None
            item = self._interactions.pop(item_id)
            self._interaction_by_activity.pop(activity_id, None)
            self._interaction_by_key.pop((item.kind, item.actor_uri, item.object_uri), None)
            self._persist_interaction_removal(item_id)
            return item

    def interactions_for(self, object_uri: str) -> list[Interaction]:
        with self._lock:
            found = [i for i in self._interactions.values() if i.object_uri == object_uri]
            return sorted(found, key=lambda i: i.id)

    # --- peers, seen, tombstones ---------------------------------------------------

    def record_peer(self, domain: str, inbox_hint: str | None = None) -> None:
        with self._lock:
            if inbox_hint is not None or domain not in self._peers:
                self._peers[domain] = inbox_hint or self._peers.get(domain)
            self._persist_peers()

    def list_peers(self) -> list[tuple[str, str | None]]:
        with self._lock:
            return sorted(self._peers.items())

    def record_seen(self, activity_id: str) -> bool:
        with self._lock:
            if activity_id in self._seen:
                return False
            self._seen.add(activity_id)
            self._persist_seen_append(activity_id)
            return True

    def add_tombstone(self, actor_uri: str) -> None:
        with self._lock:
            if actor_uri not in self._tombstones:
                self._tombstones.add(actor_uri)
                self._persist_tombstone_append(actor_uri)

    def is_tombstoned(self, actor_uri: str) -> bool:
        with self._lock:
            return actor_uri in self._tombstones

    # --- keys and tokens --------------------------------------------------------

    def save_keypair(self, username: str, private_pem: str, public_pem: str) -> None:
        with self._lock:
            self._keys[username] = (private_pem, public_pem)
            self._persist_keypair(username, private_pem, public_pem)

    def keypair(self, username: str) -> tuple[str, str] | None:
        with self._lock:
            return self._keys.get(username)

    def save_token(self, account_id: int, token: str) -> None:
        with self._lock:
            previous = self._token_by_account.pop(account_id, None)
            if previous is not None:
                self._tokens.pop(previous, None)
            self._tokens[token] = account_id
            self._token_by_account[account_id] = token
            self._persist_tokens()

    def account_id_for_token(self, token: str) -> int | None:
        with self._lock:
            return self._tokens.get(token)

    def token_for_account(self, account_id: int) -> str | None:
        with self._lock:
            return self._token_by_account.get(account_id)

    # --- deletion -----------------------------------------------------------------

    def delete_account_data(self, actor_uri: str) -> dict[str, int]:
        with self._lock:
            self.add_tombstone(actor_uri)
            report = {
                "account": 0,
                "statuses": 0,
                "timeline_entries": 0,
                "follows": 0,
                "interactions": 0,
                "tokens": 0,
            }
            account_id = self._account_by_uri.get(actor_uri)
            if account_id is None:
                return report
            account = self._accounts.pop(account_id)
            self._account_by_uri.pop(actor_uri, None)
            report["account"] = 1

            dead_status_ids = [
                s.id for s in self._statuses.values()
                if s.account_id == account_id and s.id is not None
            ]
            dead_status_uris = set()
            for status_id in dead_status_ids:
                status = self._statuses.pop(status_id)
                if status.uri:
                    self._status_by_uri.pop(status.uri, None)
                    dead_status_uris.add(status.uri)
                for tag in status.tags:
                    ids = self._tag_index.get(tag)
                    if ids and status_id in ids:
                        ids.remove(status_id)
                        if not ids:
                            self._tag_index.pop(tag, None)
            report["statuses"] = len(dead_status_ids)

            # Their own timeline, plus their statuses in everyone else's.
            own = self._timelines.pop(account_id, {})
            report["timeline_entries"] += len(own)
            dead = set(dead_status_ids)
            for timeline in self._timelines.values():
                for status_id in dead.intersection(timeline):
                    timeline.pop(status_id)
                    report["timeline_entries"] += 1

            dead_follow_ids = [
                r.id
                for r in self._follows.values()
                if r.follower_actor_uri == actor_uri or r.followee_account_id == account_id
            ]
            for follow_id in dead_follow_ids:
                relation = self._follows.pop(follow_id)
                self._follow_by_pair.pop(
                    (relation.follower_actor_uri, relation.followee_account_id), None
                )
                self._follow_by_activity.pop(relation.follow_activity_id, None)
            report["follows"] = len(dead_follow_ids)

            dead_interaction_ids = [
                i.id
                for i in self._interactions.values()
                if i.actor_uri == actor_uri or i.object_uri in dead_status_uris
            ]
            for item_id in dead_interaction_ids:
                item = self._interactions.pop(item_id)
                self._interaction_by_key.pop((item.kind, item.actor_uri, item.object_uri), None)
                if item.activity_id:
                    self._interaction_by_activity.pop(item.activity_id, None)
            report["interactions"] = len(dead_interaction_ids)

            token = self._token_by_account.pop(account_id, None)
            if token is not None:
                self._tokens.pop(token, None)
                report["tokens"] = 1

            # The keypair stays: the delete announcement must still be signed
            # after the account row is gone.
            del account
            self._persist_full_resync()
            return report

    # --- delivery tasks --------------------------------------------------------------

    def enqueue_task(
        self, activity_body: str, target_inbox: str, key_id: str, now: float
    ) -> DeliveryTask:
        with self._lock:
            task = DeliveryTask(
                task_id=self.next_sequence("task"),
                activity_body=activity_body,
                target_inbox=target_inbox,
                key_id=key_id,
                created_at=now,
                next_attempt_at=now,
            )
            self._tasks[task.task_id] = task
            self._persist_task(task)
            return task

    def save_task(self, task: DeliveryTask) -> None:
        with self._lock:
            self._tasks[task.task_id] = task
            self._persist_task(task)

    def due_tasks(self, now: float) -> list[DeliveryTask]:
        with self._lock:
            due = [
                t for t in self._tasks.values() if not t.terminal and t.next_attempt_at <= now
            ]
            return sorted(due, key=lambda t: (t.next_attempt_at, t.task_id))

    def pending_tasks(self) -> list[DeliveryTask]:
        with self._lock:
            return sorted(
                (t for t in self._tasks.values() if not t.terminal), key=lambda t: t.task_id
            )

    def pending_count(self) -> int:
        with self._lock:
            return sum(1 for t in self._tasks.values() if not t.terminal)

    def next_pending_time(self) -> float | None:
        with self._lock:
            times = [t.next_attempt_at for t in self._tasks.values() if not t.terminal]
            return min(times) if times else None

    def all_tasks(self) -> list[DeliveryTask]:
        with self._lock:
            return sorted(self._tasks.values(), key=lambda t: t.task_id)

    # --- snapshot and lifecycle --------------------------------------------------------

    def snapshot(self) -> bytes:
        """Canonical byte serialization of the whole store, for equality checks."""
        with self._lock:
            timelines = sorted(
                (owner, status_id, at)
                for owner, entries in self._timelines.items()
                for status_id, at in entries.items()
            )
            data = {
                "accounts": {str(k): account_record(v) for k, v in sorted(self._accounts.items())},
                "statuses": {str(k): status_record(v) for k, v in sorted(self._statuses.items())},
                "follows": {str(k): follow_record(v) for k, v in sorted(self._follows.items())},
                "interactions": {
                    str(k): interaction_record(v) for k, v in sorted(self._interactions.items())
                },
                "timelines": timelines,
                "tag_index": {k: sorted(v) for k, v in sorted(self._tag_index.items())},
                "peers": dict(sorted(self._peers.items())),
                "seen": sorted(self._seen),
                "tombstones": sorted(self._tombstones),
                "tokens": {str(k): v for k, v in sorted(self._token_by_account.items())},
                "keys": {k: list(v) for k, v in sorted(self._keys.items())},
                "tasks": {str(k): task_record(v) for k, v in sorted(self._tasks.items())},
                "counters": dict(sorted(self._counters.items())),
            }
            return json.dumps(data, sort_keys=True, ensure_ascii=False).encode("utf-8")

    def close(self) -> None:
        pass

    # --- persistence hooks (no-ops in memory) ----------------------------------------

    def _persist_counters(self) -> None: ...
    def _persist_account(self, account: Account) -> None: ...
    def _persist_status(self, status: Status) -> None: ...
    def _persist_timeline_append(self, owner_id: int, status_id: int, at: float) -> None: ...
    def _persist_follow(self, relation: FollowRelation) -> None: ...
    def _persist_follow_removal(self, follow_id: int) -> None: ...
    def _persist_interaction(self, item: Interaction) -> None: ...
    def _persist_interaction_removal(self, item_id: int) -> None: ...
    def _persist_peers(self) -> None: ...
    def _persist_seen_append(self, activity_id: str) -> None: ...
    def _persist_tombstone_append(self, actor_uri: str) -> None: ...
    def _persist_keypair(self, username: str, private_pem: str, public_pem: str) -> None: ...
    def _persist_tokens(self) -> None: ...
    def _persist_task(self, task: DeliveryTask) -> None: ...
    def _persist_full_resync(self) -> None: ...


def _write_atomic(path: Path, data: bytes, mode: int | None = None) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    if mode is not None:
        os.chmod(tmp, mode)
    os.replace(tmp, path)


def _write_json(path: Path, payload: Any) -> None:
    _write_atomic(path, json.dumps(payload, ensure_ascii=False, indent=1).encode("utf-8"))


class FileStore(MemoryStore):
    """Write-through file backend; every commit hits disk before returning."""

    _DIRS = ("accounts", "statuses", "follows", "interactions", "tasks", "keys")

    def __init__(self, root: str | os.PathLike[str]) -> None:
        super().__init__()
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            for name in self._DIRS:
                (self.root / name).mkdir(exist_ok=True)
        except OSError as exc:
            raise StorageUnavailable(f"cannot prepare storage root {root}: {exc}") from exc
        self._load()

    # --- loading ---------------------------------------------------------------

    def _read_json(self, path: Path) -> Any | None:
        try:
            return json.loads(path.read_text("utf-8"))
        except FileNotFoundError:
            return None
        except ValueError as exc:
            raise StorageUnavailable(f"corrupt store file {path}: {exc}") from exc

    def _records_in(self, directory: Path) -> Iterable[Any]:
        for path in sorted(directory.glob("*.json")):
            record = self._read_json(path)
            if record is not None:
                yield record

    def _load(self) -> None:
        counters = self._read_json(self.root / "counters.json")
        if counters:
            self._counters.update(counters)

        for record in self._records_in(self.root / "accounts"):
            account = account_from_record(record)
            assert account.id is not None
            self._accounts[account.id] = account
            self._account_by_uri[account.actor_uri] = account.id

        for record in self._records_in(self.root / "statuses"):
            status = status_from_record(record)
            assert status.id is not None
            self._statuses[status.id] = status
            if status.uri:
                self._status_by_uri[status.uri] = status.id
        for status_id in sorted(self._statuses):
            for tag in self._statuses[status_id].tags:
                self._tag_index.setdefault(tag, []).append(status_id)

        for record in self._records_in(self.root / "follows"):
            relation = follow_from_record(record)
            self._follows[relation.id] = relation
            self._follow_by_pair[
                (relation.follower_actor_uri, relation.followee_account_id)
            ] = relation.id
            if relation.follow_activity_id:
                self._follow_by_activity[relation.follow_activity_id] = relation.id

        for record in self._records_in(self.root / "interactions"):
            item = interaction_from_record(record)
            self._interactions[item.id] = item
            self._interaction_by_key[(item.kind, item.actor_uri, item.object_uri)] = item.id
            if item.activity_id:
                self._interaction_by_activity[item.activity_id] = item.id

        for record in self._records_in(self.root / "tasks"):
            task = task_from_record(record)
            self._tasks[task.task_id] = task

        timelines = self.root / "timelines.jsonl"
        if timelines.exists():
            for line in timelines.read_text("utf-8").splitlines():
                if not line.strip():
                    continue
                entry = json.loads(line)
                self._timelines.setdefault(entry["owner"], {}).setdefault(
                    entry["status"], entry["at"]
                )

        peers = self._read_json(self.root / "peers.json")
        if peers:
            self._peers.update(peers)

        tokens = self._read_json(self.root / "tokens.json")
        if tokens:
            for account_id_text, token in tokens.items():
                account_id = int(account_id_text)
                self._tokens[token] = account_id
                self._token_by_account[account_id] = token

        for name, collection in (("seen.log", self._seen), ("tombstones.log", self._tombstones)):
            path = self.root / name
            if path.exists():
                for line in path.read_text("utf-8").splitlines():
                    if line:
                        collection.add(line)

        keys_dir = self.root / "keys"
        for private_path in sorted(keys_dir.glob("*.pem")):
            if private_path.name.endswith(".pub.pem"):
                continue
            username = private_path.name[: -len(".pem")]
            public_path = keys_dir / f"{username}.pub.pem"
            if public_path.exists():
                self._keys[username] = (
                    private_path.read_text("utf-8"),
                    public_path.read_text("utf-8"),
                )

    # --- write-through hooks ------------------------------------------------------

    def _persist_counters(self) -> None:
        _write_json(self.root / "counters.json", self._counters)

    def _persist_account(self, account: Account) -> None:
        _write_json(self.root / "accounts" / f"{account.id}.json", account_record(account))

    def _persist_status(self, status: Status) -> None:
        _write_json(self.root / "statuses" / f"{status.id}.json", status_record(status))

    def _persist_timeline_append(self, owner_id: int, status_id: int, at: float) -> None:
        line = json.dumps({"owner": owner_id, "status": status_id, "at": at})
        with open(self.root / "timelines.jsonl", "a", encoding="utf-8") as handle:
            handle.write(line + "\n")
            handle.flush()

    def _persist_follow(self, relation: FollowRelation) -> None:
        _write_json(self.root / "follows" / f"{relation.id}.json", follow_record(relation))

    def _persist_follow_removal(self, follow_id: int) -> None:
        (self.root / "follows" / f"{follow_id}.json").unlink(missing_ok=True)

    def _persist_interaction(self, item: Interaction) -> None:
        _write_json(self.root / "interactions" / f"{item.id}.json", interaction_record(item))

    def _persist_interaction_removal(self, item_id: int) -> None:
        (self.root / "interactions" / f"{item_id}.json").unlink(missing_ok=True)

    def _persist_peers(self) -> None:
        _write_json(self.root / "peers.json", dict(sorted(self._peers.items())))

    def _persist_seen_append(self, activity_id: str) -> None:
        with open(self.root / "seen.log", "a", encoding="utf-8") as handle:
            handle.write(activity_id + "\n")
            handle.flush()

    def _persist_tombstone_append(self, actor_uri: str) -> None:
        with open(self.root / "tombstones.log", "a", encoding="utf-8") as handle:
            handle.write(actor_uri + "\n")
            handle.flush()

    def _persist_keypair(self, username: str, private_pem: str, public_pem: str) -> None:
        private_path = self.root / "keys" / f"{username}.pem"
        _write_atomic(private_path, private_pem.encode("ascii"), mode=0o600)
        _write_atomic(self.root / "keys" / f"{username}.pub.pem", public_pem.encode("ascii"))

    def _persist_tokens(self) -> None:
        payload = {str(k): v for k, v in sorted(self._token_by_account.items())}
        _write_json(self.root / "tokens.json", payload)

    def _persist_task(self, task: DeliveryTask) -> None:
        _write_json(self.root / "tasks" / f"{task.task_id}.json", task_record(task))

    def _persist_full_resync(self) -> None:
        """Rewrite every collection a deletion may have touched."""
        self._resync_dir("accounts", {a.id: account_record(a) for a in self._accounts.values()})
        self._resync_dir("statuses", {s.id: status_record(s) for s in self._statuses.values()})
        self._resync_dir("follows", {r.id: follow_record(r) for r in self._follows.values()})
        self._resync_dir(
            "interactions", {i.id: interaction_record(i) for i in self._interactions.values()}
        )
        lines = [
            json.dumps({"owner": owner, "status": status_id, "at": at})
            for owner, entries in sorted(self._timelines.items())
            for status_id, at in sorted(entries.items())
        ]
        _write_atomic(
            self.root / "timelines.jsonl",
            ("\n".join(lines) + "\n" if lines else "").encode("utf-8"),
        )
        self._persist_tokens()
        self._persist_peers()

    def _resync_dir(self, name: str, wanted: dict[Any, Any]) -> None:
        directory = self.root / name
        keep = {f"{record_id}.json" for record_id in wanted}
        for path in directory.glob("*.json"):
            if path.name not in keep:
                path.unlink(missing_ok=True)
        for record_id, record in wanted.items():
            _write_json(directory / f"{record_id}.json", record)


def open_store(backend: str, path: str | None = None) -> MemoryStore:
    if backend == "memory":
        return MemoryStore()
    if backend == "file":
        if not path:
            raise StorageUnavailable("file backend needs a storage path")
        return FileStore(path)
    raise StorageUnavailable(f"unknown storage backend {backend!r}")
