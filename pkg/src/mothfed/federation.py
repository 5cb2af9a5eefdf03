"""Server-to-server engine: inbox dispatch, fan-out, and the delivery queue.

The engine never talks to the network directly; it enqueues DeliveryTasks
and process_queue drains them through whatever transport it is handed. All
inbound handling is idempotent by activity id, and every rejected or ignored
activity produces a Warning effect rather than vanishing.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Any

from .activitypub import (
    ACTIVITY_MEDIA_TYPE,
    PUBLIC_COLLECTION,
    Activity,
    ActivityKind,
    Actor,
    Note,
    serialize_object,
    uri_host,
)
from .errors import ActorMismatch, DuplicateUri, TombstonedActor
from .httpsig import sign_request
from .mastodon import Account, Status, Visibility, actor_to_account, note_to_status, status_to_note
from .transport import HttpRequest, Transport, TransportError


@dataclass(frozen=True)
class DeliveryTask:
    task_id: int
    activity_body: str
    target_inbox: str
    key_id: str
    created_at: float
    next_attempt_at: float
    attempts: int = 0
    terminal: bool = False
    result: str | None = None


@dataclass(frozen=True)
class FollowRelation:
    id: int
    follower_actor_uri: str
    followee_account_id: int
    state: str  # "pending" | "accepted"
    follow_activity_id: str
    created_at: float


@dataclass(frozen=True)
class Interaction:
    id: int
    kind: str  # "Like" | "Announce"
    actor_uri: str
    object_uri: str
    activity_id: str
    created_at: float


@dataclass(frozen=True)
class Effect:
    kind: str
    detail: dict[str, Any]


@dataclass(frozen=True)
class QueueReport:
    attempted: int
    delivered: int
    retried: int
    failed: int
    outcomes: tuple[tuple[int, str], ...]


def _warning(message: str) -> Effect:
    return Effect("Warning", {"message": message})


def _object_uri(obj: str | Note | Actor | None) -> str | None:
    if isinstance(obj, str):
        return obj
    if isinstance(obj, (Note, Actor)):
        return obj.id
    return None


def username_from_key_id(key_id: str) -> str:
    """Local username embedded in a /users/{name}#main-key id."""
    path = key_id.split("#", 1)[0]
    return path.rstrip("/").rsplit("/", 1)[-1]


class FederationEngine:
    def __init__(self, config, store, clock) -> None:
        self.config = config
        self.store = store
        self.clock = clock
        # Idempotency check and write must be one step across handlers.
        self._inbox_lock = threading.Lock()
        self._queue_lock = threading.Lock()

    def _now_dt(self) -> datetime:
        return datetime.fromtimestamp(self.clock(), tz=timezone.utc)

    # --- inbound ------------------------------------------------------------

    def handle_inbox(self, activity: Activity, verified_actor: Actor) -> list[Effect]:
        if activity.actor != verified_actor.id:
            raise ActorMismatch(
                f"activity actor {activity.actor} != signer {verified_actor.id}"
            )
        with self._inbox_lock:
            return self._dispatch(activity, verified_actor)

    def _dispatch(self, activity: Activity, actor: Actor) -> list[Effect]:
        store = self.store
        if activity.id is not None and not store.record_seen(activity.id):
            return []
        if store.is_tombstoned(actor.id):
            raise TombstonedActor(actor.id)

        domain = uri_host(actor.id)
        if domain and domain.lower() != self.config.domain.lower():
            store.record_peer(domain.lower(), actor.inbox)

        if activity.kind is ActivityKind.DELETE:
            return self._handle_delete(activity, actor)

        sender = store.upsert_account(
            actor_to_account(actor, self.config.domain, self._now_dt())
        )

        if activity.kind is ActivityKind.CREATE:
            return self._handle_create(activity, sender)
        if activity.kind is ActivityKind.FOLLOW:
            return self._handle_follow(activity, actor)
        if activity.kind is ActivityKind.ACCEPT:
            return self._handle_accept(activity, actor)
        if activity.kind in (ActivityKind.LIKE, ActivityKind.ANNOUNCE):
            return self._handle_interaction(activity, actor)
        if activity.kind is ActivityKind.UNDO:
            return self._handle_undo(activity, actor)
        return [_warning(f"activity kind {activity.kind.value} not handled")]

    def _handle_create(self, activity: Activity, sender: Account) -> list[Effect]:
        store = self.store
        note = activity.object
        if not isinstance(note, Note):
            return [_warning("Create without an embedded Note ignored")]
        if note.attributed_to != sender.actor_uri:
            return [_warning("Create for a Note attributed to someone else ignored")]
        status, warnings = note_to_status(
            note, sender, store.get_account_by_uri, received_at=self._now_dt()
        )
        try:
            stored = store.store_status(status)
        except DuplicateUri:
            return [_warning(f"status {status.uri} already stored")]
        effects: list[Effect] = [
            Effect("StoreStatus", {"status_id": stored.id, "uri": stored.uri})
        ]
        effects.extend(_warning(w) for w in warnings)
        effects.extend(self.local_fan_in(stored, sender, include_author=False))
        return effects

    def local_fan_in(
        self, status: Status, author: Account, include_author: bool
    ) -> list[Effect]:
        """Insert a stored status into every local home timeline that gets it:
        the author's own (when local), mentioned locals at any visibility, and
        local accepted followers for public/followers statuses."""
        store = self.store
        assert status.id is not None
        recipients: dict[int, Account] = {}
        if include_author and author.id is not None and not author.is_remote:
            recipients[author.id] = author
        for mention in status.mentions:
            account = store.get_account_by_uri(mention.actor_uri)
            if account is not None and not account.is_remote and account.id is not None:
                recipients.setdefault(account.id, account)
        if status.visibility in (Visibility.PUBLIC, Visibility.FOLLOWERS):
            for relation in store.followers_of(author.id, state="accepted"):
                follower = store.get_account_by_uri(relation.follower_actor_uri)
                if follower is not None and not follower.is_remote and follower.id is not None:
                    recipients.setdefault(follower.id, follower)
        effects = []
        for owner_id, owner in recipients.items():
            if store.insert_timeline_entry(owner_id, status.id, self.clock()):
                effects.append(
                    Effect("TimelineInsert", {"owner": owner.acct, "status_id": status.id})
                )
        return effects

    def _handle_follow(self, activity: Activity, actor: Actor) -> list[Effect]:
        store = self.store
        if activity.id is None:
            return [_warning("Follow without an id cannot be acknowledged")]
        target_uri = _object_uri(activity.object)
        if target_uri is None:
            return [_warning("Follow without an object ignored")]
        target = store.get_account_by_uri(target_uri)
        if target is None or target.is_remote or target.id is None:
            return [_warning(f"Follow target {target_uri} is not a local account")]

        relation = store.upsert_follow(
            follower_actor_uri=actor.id,
            followee_account_id=target.id,
            state="pending",
            follow_activity_id=activity.id,
            created_at=self.clock(),
        )
        effects = [
            Effect("UpsertFollow", {"follow_id": relation.id, "state": "pending"})
        ]

        accept = Activity(
            id=f"{target.actor_uri}#accepts/follows/{relation.id}",
            kind=ActivityKind.ACCEPT,
            actor=target.actor_uri,
            object=activity.id,
            to=(actor.id,),
        )
        task = self.enqueue(accept, signer=target, target_inbox=actor.inbox)
        effects.append(
            Effect("EnqueueDelivery", {"task_id": task.task_id, "inbox": actor.inbox})
        )
        store.set_follow_state(relation.id, "accepted")
        effects.append(Effect("AcceptFollow", {"follow_id": relation.id}))
        return effects

    def _handle_accept(self, activity: Activity, actor: Actor) -> list[Effect]:
        store = self.store
        follow_id = _object_uri(activity.object)
        if follow_id is None:
            return [_warning("Accept without an object ignored")]
        relation = store.find_follow_by_activity(follow_id)
        if relation is None:
            return [_warning(f"Accept references unknown object {follow_id}")]
        followee = store.get_account(relation.followee_account_id)
        if followee is None or followee.actor_uri != actor.id:
            return [_warning("Accept from an actor who is not the followee ignored")]
        store.set_follow_state(relation.id, "accepted")
        return [Effect("AcceptFollow", {"follow_id": relation.id})]

    def _handle_interaction(self, activity: Activity, actor: Actor) -> list[Effect]:
        store = self.store
        object_uri = _object_uri(activity.object)
        if object_uri is None:
            return [_warning(f"{activity.kind.value} without an object ignored")]
        recorded = store.record_interaction(
            kind=activity.kind.value,
            actor_uri=actor.id,
            object_uri=object_uri,
            activity_id=activity.id or "",
            created_at=self.clock(),
        )
        if not recorded:
            return [_warning(f"{activity.kind.value} already recorded for {object_uri}")]
        return [
            Effect(
                "RecordInteraction",
                {"kind": activity.kind.value, "object": object_uri, "actor": actor.id},
            )
        ]

    def _handle_delete(self, activity: Activity, actor: Actor) -> list[Effect]:
        object_uri = _object_uri(activity.object)
        if object_uri != actor.id:
            # Only self-deletion is honored; deleting someone else's data on
            # another server's say-so would be an attack vector.
            return [_warning(f"Delete for {object_uri} from {actor.id} ignored")]
        report = self.store.delete_account_data(actor.id)
        return [Effect("DeleteAccount", {"actor": actor.id, **report})]

    def _handle_undo(self, activity: Activity, actor: Actor) -> list[Effect]:
        store = self.store
        undone_id = _object_uri(activity.object)
        if undone_id is None:
            return [_warning("Undo without an object ignored")]
        interaction = store.remove_interaction_by_activity(undone_id)
        if interaction is not None:
            if interaction.actor_uri != actor.id:
                # Put it back: only the original actor may undo.
                store.restore_interaction(interaction)
                return [_warning("Undo from a different actor ignored")]
            return [
                Effect(
                    "RemoveInteraction",
                    {"kind": interaction.kind, "object": interaction.object_uri},
                )
            ]
        relation = store.find_follow_by_activity(undone_id)
        if relation is not None:
            if relation.follower_actor_uri != actor.id:
                return [_warning("Undo from a different actor ignored")]
            store.remove_follow(relation.id)
            return [Effect("RemoveFollow", {"follow_id": relation.id})]
        return [_warning(f"Undo references unknown object {undone_id}")]

    # --- outbound -----------------------------------------------------------

    def enqueue(self, activity: Activity, signer: Account, target_inbox: str) -> DeliveryTask:
        body = serialize_object(activity)
        key_id = f"{signer.actor_uri}#main-key"
        task = self.store.enqueue_task(
            activity_body=body,
            target_inbox=target_inbox,
            key_id=key_id,
            now=self.clock(),
        )
        return task

    def fan_out(
        self,
        status: Status,
        author: Account,
        in_reply_to_uri: str | None = None,
    ) -> list[DeliveryTask]:
        """Delivery tasks for a freshly stored local status."""
        store = self.store
        note = status_to_note(status, author, in_reply_to_uri=in_reply_to_uri)
        activity = Activity(
            id=f"{status.uri}/activity",
            kind=ActivityKind.CREATE,
            actor=author.actor_uri,
            object=note,
            to=note.to,
            cc=note.cc,
            published=status.created_at,
        )

        targets: dict[str, Account] = {}
        if status.visibility in (Visibility.PUBLIC, Visibility.FOLLOWERS):
            for relation in store.followers_of(author.id, state="accepted"):
                follower = store.get_account_by_uri(relation.follower_actor_uri)
                if follower is not None and follower.is_remote:
                    targets.setdefault(follower.inbox_uri, follower)
        for mention in status.mentions:
            account = store.get_account_by_uri(mention.actor_uri)
            if account is not None and account.is_remote:
                targets.setdefault(account.inbox_uri, account)

        tasks = []
        body_activity = activity
        for inbox, account in targets.items():
            tasks.append(self.enqueue(body_activity, signer=author, target_inbox=inbox))
            domain = uri_host(account.actor_uri)
            if domain:
                store.record_peer(domain.lower(), account.inbox_uri)
        return tasks

    def propagate_delete(self, account: Account) -> list[DeliveryTask]:
        """One Delete activity per known peer, signed by the dying account."""
        activity = Activity(
            id=f"{account.actor_uri}#delete",
            kind=ActivityKind.DELETE,
            actor=account.actor_uri,
            object=account.actor_uri,
            to=(PUBLIC_COLLECTION,),
        )
        scheme = "http" if self.config.test_mode else "https"
        tasks = []
        for domain, inbox_hint in self.store.list_peers():
            if domain.lower() == self.config.domain.lower():
                continue
            inbox = inbox_hint or f"{scheme}://{domain}/inbox"
            tasks.append(self.enqueue(activity, signer=account, target_inbox=inbox))
        return tasks

    # --- delivery -----------------------------------------------------------

    def process_queue(self, now: float, transport: Transport) -> QueueReport:
        """Attempt every task due at `now`. Failures are data, never raised."""
        with self._queue_lock:
            due = self.store.due_tasks(now)
            attempted = delivered = retried = failed = 0
            outcomes: list[tuple[int, str]] = []
            for task in due:
                attempted += 1
                updated = self._attempt(task, now, transport)
                self.store.save_task(updated)
                assert updated.result is not None
                outcomes.append((updated.task_id, updated.result))
                if updated.terminal and updated.result.startswith("delivered"):
                    delivered += 1
                elif updated.terminal:
                    failed += 1
                else:
                    retried += 1
            return QueueReport(attempted, delivered, retried, failed, tuple(outcomes))

    def _attempt(self, task: DeliveryTask, now: float, transport: Transport) -> DeliveryTask:
        body = task.activity_body.encode("utf-8")
        username = username_from_key_id(task.key_id)
        keys = self.store.keypair(username)
        if keys is None:
            return replace(task, terminal=True, result=f"failed: no key for {username}")
        private_pem, _ = keys
        date = datetime.fromtimestamp(now, tz=timezone.utc)
        # Signed fresh on every attempt so the Date header stays in the
        # receiver's skew window across retries.
        _, headers = sign_request(
            "POST", task.target_inbox, body, task.key_id, private_pem, date
        )
        headers["Content-Type"] = ACTIVITY_MEDIA_TYPE

        try:
            response = transport.request(
                HttpRequest("POST", task.target_inbox, headers, body)
            )
        except TransportError as exc:
            return self._reschedule(task, now, f"network error: {exc}")

        if 200 <= response.status < 300:
            return replace(task, terminal=True, result=f"delivered: {response.status}")
        if response.status == 429 or response.status >= 500:
            return self._reschedule(task, now, f"status {response.status}")
        return replace(task, terminal=True, result=f"failed: rejected with {response.status}")

    def _reschedule(self, task: DeliveryTask, now: float, reason: str) -> DeliveryTask:
        attempts = task.attempts + 1
        if attempts >= self.config.max_attempts:
            return replace(
                task,
                attempts=attempts,
                terminal=True,
                result=f"failed: {reason} after {attempts} attempts",
            )
        delay = self.config.retry_base_seconds * (2 ** attempts)
        return replace(
            task,
            attempts=attempts,
            terminal=False,
            next_attempt_at=now + delay,
            result=f"retry scheduled: {reason}",
        )
