"""HTTP surface: WebFinger, ActivityPub S2S endpoints, Mastodon client API.

Every handler is stateless and funnels through HttpApi.handle, which never
lets an exception escape: unexpected failures become a 500 with a JSON body.
No route returns 200 with an empty body, and every error body carries a
machine-readable {"error": reason}.
"""
from __future__ import annotations

import json
from html import escape as html_escape
from typing import Any

from .activitypub import (
    ACTIVITY_MEDIA_TYPE,
    AS_CONTEXT,
    JRD_MEDIA_TYPE,
    Activity,
    ActivityKind,
    format_timestamp,
    parse_activity,
    to_wire_dict,
    uri_host,
)
from .errors import (
    ActorFetchFailed,
    ActorMismatch,
    DuplicateUri,
    MalformedDocument,
    MalformedHandle,
    MissingRequiredField,
    MothError,
    ResolutionFailed,
    SignatureError,
    TombstonedActor,
    UnsupportedType,
)
from .httpsig import verify_signature
from .identity import build_jrd, parse_acct
from .mastodon import (
    Account,
    Mention,
    Status,
    Visibility,
    account_to_actor,
    extract_mentions,
    extract_tags,
    sanitize_html,
    status_to_note,
)
from .transport import HttpRequest, HttpResponse

JSON_MEDIA_TYPE = "application/json"
HTML_MEDIA_TYPE = "text/html; charset=utf-8"


def _json_response(status: int, payload: Any, media_type: str = JSON_MEDIA_TYPE) -> HttpResponse:
    body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
    return HttpResponse(status, {"Content-Type": media_type}, body)


def _error(status: int, reason: str, detail: str | None = None) -> HttpResponse:
    payload: dict[str, Any] = {"error": reason}
    if detail:
        payload["detail"] = detail
    return _json_response(status, payload)


class HttpApi:
    def __init__(self, node) -> None:
        self.node = node

    # --- dispatch ---------------------------------------------------------------

    def handle(self, request: HttpRequest) -> HttpResponse:
        try:
            return self._route(request)
        except MothError as exc:
            return _error(500, exc.reason, str(exc))
        except Exception as exc:  # noqa: BLE001 - the surface must never crash
            return _error(500, "InternalError", f"{type(exc).__name__}: {exc}")

    def _route(self, request: HttpRequest) -> HttpResponse:
        parts = tuple(p for p in request.path.split("/") if p)
        match (request.method.upper(), parts):
            case ("GET", (".well-known", "webfinger")):
                return self._webfinger(request)
            case ("GET", ("users", name)):
                return self._actor(request, name)
            case ("POST", ("users", name, "inbox")):
                return self._inbox(request, name)
            case ("GET", ("users", name, "outbox")):
                return self._outbox(name)
            case ("GET", ("users", name, "followers")):
                return self._followers(name)
            case ("GET", ("users", name, "following")):
                return self._following(name)
            case ("GET", ("users", name, "statuses", status_id)):
                return self._status_document(name, status_id)
            case ("POST", ("api", "v1", "statuses")):
                return self._post_status(request)
            case ("GET", ("api", "v1", "timelines", "home")):
                return self._home_timeline(request)
            case ("GET", ("api", "v1", "timelines", "tag", tag)):
                return self._tag_timeline(request, tag)
            case ("POST", ("api", "v1", "accounts", account_id, "follow")):
                return self._follow(request, account_id)
            case ("GET", ("api", "v1", "accounts", "lookup")):
                return self._lookup(request)
            case _:
                return _error(404, "NotFound", f"no route for {request.method} {request.path}")

    # --- helpers ----------------------------------------------------------------

    def _local_account_or_error(self, name: str) -> Account | HttpResponse:
        account = self.node.store.get_local_account(name)
        if account is not None:
            return account
        if self.node.store.is_tombstoned(self.node.actor_uri_for(name)):
            return _error(410, "Gone", f"account {name} was deleted")
        return _error(404, "UnknownUser", f"no local account {name}")

    def _bearer_account(self, request: HttpRequest) -> Account | None:
        header = request.header("Authorization") or ""
        if not header.startswith("Bearer "):
            return None
        return self.node.account_for_token(header[len("Bearer "):].strip())

    def _page_params(self, request: HttpRequest) -> tuple[int, int | None] | HttpResponse:
        try:
            limit = int(request.query.get("limit", "20"))
            raw_max = request.query.get("max_id")
            max_id = int(raw_max) if raw_max is not None else None
        except ValueError:
            return _error(400, "BadParameter", "limit and max_id must be integers")
        return max(1, min(limit, 40)), max_id

    def _render_account(self, account: Account) -> dict[str, Any]:
        return {
            "id": str(account.id),
            "username": account.username,
            "acct": account.acct,
            "display_name": account.display_name,
            "url": account.actor_uri,
            "created_at": format_timestamp(account.created_at),
        }

    def _render_status(self, status: Status) -> dict[str, Any]:
        author = self.node.store.get_account(status.account_id)
        data: dict[str, Any] = {
            "id": str(status.id),
            "uri": status.uri,
            "content": status.content,
            "visibility": status.visibility.value,
            "account": self._render_account(author) if author is not None else None,
            "mentions": [{"acct": m.acct, "url": m.actor_uri} for m in status.mentions],
            "tags": [{"name": t} for t in status.tags],
            "created_at": format_timestamp(status.created_at),
        }
        if status.in_reply_to_id is not None:
            data["in_reply_to_id"] = str(status.in_reply_to_id)
        return data

    # --- discovery ----------------------------------------------------------------

    def _webfinger(self, request: HttpRequest) -> HttpResponse:
        resource = request.query.get("resource")
        if not resource:
            return _error(400, "MissingResource", "resource query parameter required")
        if not resource.lower().startswith("acct:"):
            return _error(400, "BadResource", "resource must use the acct: scheme")
        try:
            handle = parse_acct(resource, self.node.domain)
        except MalformedHandle as exc:
            return _error(400, "MalformedHandle", str(exc))
        if handle.domain != self.node.domain.lower():
            return _error(404, "WrongDomain", f"{handle.domain} is not served here")
        account = self.node.store.get_local_account(handle.username)
        if account is None:
            return _error(404, "UnknownUser", f"no local account {handle.username}")
        document = build_jrd(handle, account.actor_uri)
        return HttpResponse(
            200, {"Content-Type": JRD_MEDIA_TYPE}, document.to_json().encode("utf-8")
        )

    def _actor(self, request: HttpRequest, name: str) -> HttpResponse:
        found = self._local_account_or_error(name)
        if isinstance(found, HttpResponse):
            return found
        accept = (request.header("Accept") or "").lower()
        wants_activity = "activity+json" in accept or "ld+json" in accept
        wants_html = "text/html" in accept
        if wants_html and not wants_activity:
            handle = f"@{found.username}@{self.node.domain}"
            body = (
                "<!DOCTYPE html><html><head><title>"
                f"{html_escape(handle)}</title></head><body>"
                f"<h1>{html_escape(handle)}</h1>"
                f'<p>ActivityPub actor: <a href="{html_escape(found.actor_uri)}">'
                f"{html_escape(found.actor_uri)}</a></p></body></html>"
            )
            return HttpResponse(200, {"Content-Type": HTML_MEDIA_TYPE}, body.encode("utf-8"))
        actor = account_to_actor(found, self.node.base_url)
        return _json_response(200, to_wire_dict(actor), ACTIVITY_MEDIA_TYPE)

    # --- federation ----------------------------------------------------------------

    def _inbox(self, request: HttpRequest, name: str) -> HttpResponse:
        found = self._local_account_or_error(name)
        if isinstance(found, HttpResponse):
            return found
        try:
            verified = verify_signature(
                method=request.method,
                target=request.target,
                headers=request.headers,
                body=request.body,
                actor_fetch=self.node.fetch_actor,
                now=self.node.now_dt(),
                skew_seconds=self.node.config.skew_seconds,
            )
        except SignatureError as exc:
            return _error(401, exc.reason, str(exc))

        try:
            activity = parse_activity(request.body)
        except MissingRequiredField as exc:
            return _error(400, exc.reason, f"missing required field: {exc}")
        except MalformedDocument as exc:
            return _error(400, exc.reason, str(exc))
        except UnsupportedType as exc:
            return _json_response(
                202, {"queued": False, "reason": exc.reason, "detail": str(exc)}
            )

        try:
            effects = self.node.engine.handle_inbox(activity, verified)
        except ActorMismatch as exc:
            return _error(401, exc.reason, str(exc))
        except TombstonedActor as exc:
            return _error(403, exc.reason, str(exc))

        warnings = []
        for effect in effects:
            if effect.kind == "Warning":
                warnings.append(effect.detail.get("message", ""))
            elif effect.kind == "DeleteAccount":
                self.node.forget_actor(effect.detail["actor"])
        return _json_response(202, {"queued": True, "warnings": warnings})

    def _outbox(self, name: str) -> HttpResponse:
        found = self._local_account_or_error(name)
        if isinstance(found, HttpResponse):
            return found
        items = []
        for status in self.node.store.statuses_by_account(found.id):
            if status.visibility is not Visibility.PUBLIC:
                continue
            note = status_to_note(status, found)
            activity = Activity(
                id=f"{status.uri}/activity",
                kind=ActivityKind.CREATE,
                actor=found.actor_uri,
                object=note,
                to=note.to,
                cc=note.cc,
                published=status.created_at,
            )
            items.append(to_wire_dict(activity, with_context=False))
        collection = {
            "@context": AS_CONTEXT,
            "id": f"{found.actor_uri}/outbox",
            "type": "OrderedCollection",
            "totalItems": len(items),
            "orderedItems": items,
        }
        return _json_response(200, collection, ACTIVITY_MEDIA_TYPE)

    def _uri_collection(self, collection_uri: str, uris: list[str]) -> HttpResponse:
        payload = {
            "@context": AS_CONTEXT,
            "id": collection_uri,
            "type": "OrderedCollection",
            "totalItems": len(uris),
            "orderedItems": uris,
        }
        return _json_response(200, payload, ACTIVITY_MEDIA_TYPE)

    def _followers(self, name: str) -> HttpResponse:
        found = self._local_account_or_error(name)
        if isinstance(found, HttpResponse):
            return found
        uris = [
            r.follower_actor_uri
            for r in self.node.store.followers_of(found.id, state="accepted")
        ]
        return self._uri_collection(f"{found.actor_uri}/followers", uris)

    def _following(self, name: str) -> HttpResponse:
        found = self._local_account_or_error(name)
        if isinstance(found, HttpResponse):
            return found
        uris = []
        for relation in self.node.store.follows_by_follower(found.actor_uri):
            if relation.state != "accepted":
                continue
            followee = self.node.store.get_account(relation.followee_account_id)
            if followee is not None:
                uris.append(followee.actor_uri)
        return self._uri_collection(f"{found.actor_uri}/following", uris)

    def _status_document(self, name: str, status_id_text: str) -> HttpResponse:
        found = self._local_account_or_error(name)
        if isinstance(found, HttpResponse):
            return found
        try:
            status_id = int(status_id_text)
        except ValueError:
            return _error(404, "NotFound", "status ids are numeric")
        status = self.node.store.get_status(status_id)
        if (
            status is None
            or status.account_id != found.id
            or status.visibility is not Visibility.PUBLIC
        ):
            return _error(404, "NotFound", "no such public status")
        note = status_to_note(status, found)
        return _json_response(200, to_wire_dict(note), ACTIVITY_MEDIA_TYPE)

    # --- client API -----------------------------------------------------------------

    def _post_status(self, request: HttpRequest) -> HttpResponse:
        author = self._bearer_account(request)
        if author is None:
            return _error(401, "Unauthorized", "missing or invalid bearer token")
        try:
            payload = json.loads(request.body or b"{}")
        except ValueError:
            return _error(400, "MalformedDocument", "request body is not JSON")
        if not isinstance(payload, dict):
            return _error(400, "MalformedDocument", "request body must be a JSON object")

        text = payload.get("status")
        if not isinstance(text, str) or not text.strip():
            return _error(422, "EmptyContent", "status text is required")
        visibility_name = payload.get("visibility", "public")
        try:
            visibility = Visibility(visibility_name)
        except ValueError:
            return _error(422, "InvalidVisibility", f"unknown visibility {visibility_name!r}")

        in_reply_to_id = None
        in_reply_to_uri = None
        raw_reply = payload.get("in_reply_to_id")
        if raw_reply is not None:
            try:
                in_reply_to_id = int(raw_reply)
            except (TypeError, ValueError):
                return _error(422, "UnknownInReplyTo", f"bad in_reply_to_id {raw_reply!r}")
            parent = self.node.store.get_status(in_reply_to_id)
            if parent is None:
                return _error(422, "UnknownInReplyTo", f"no status {in_reply_to_id}")
            in_reply_to_uri = parent.uri

        mentions, warnings = self._resolve_mentions(text)
        if visibility is Visibility.DIRECT and not mentions:
            return _error(
                422, "NoResolvableMentions", "direct statuses need at least one mention"
            )

        status_id = self.node.store.next_status_id(self.node.clock())
        stored = self.node.store.store_status(
            Status(
                id=status_id,
                uri=self.node.status_uri_for(author.username, status_id),
                content=sanitize_html(text),
                account_id=author.id,
                visibility=visibility,
                mentions=tuple(mentions),
                tags=tuple(extract_tags(text)),
                created_at=self.node.now_dt(),
                in_reply_to_id=in_reply_to_id,
            )
        )
        self.node.engine.local_fan_in(stored, author, include_author=True)
        self.node.engine.fan_out(stored, author, in_reply_to_uri=in_reply_to_uri)

        rendered = self._render_status(stored)
        if warnings:
            rendered["warnings"] = warnings
        return _json_response(200, rendered)

    def _resolve_mentions(self, text: str) -> tuple[list[Mention], list[str]]:
        mentions: list[Mention] = []
        warnings: list[str] = []
        for handle_text in extract_mentions(text, self.node.domain):
            try:
                handle = parse_acct(handle_text, self.node.domain)
            except MalformedHandle as exc:
                warnings.append(str(exc))
                continue
            if handle.domain == self.node.domain.lower():
                local = self.node.store.get_local_account(handle.username)
                if local is None:
                    warnings.append(f"no local account {handle.username}")
                    continue
                mentions.append(Mention(acct=local.acct, actor_uri=local.actor_uri))
            else:
                try:
                    remote = self.node.resolve_account(handle)
                except (ResolutionFailed, ActorFetchFailed) as exc:
                    warnings.append(f"{handle}: {exc}")
                    continue
                mentions.append(Mention(acct=remote.acct, actor_uri=remote.actor_uri))
        return mentions, warnings

    def _home_timeline(self, request: HttpRequest) -> HttpResponse:
        account = self._bearer_account(request)
        if account is None:
            return _error(401, "Unauthorized", "missing or invalid bearer token")
        params = self._page_params(request)
        if isinstance(params, HttpResponse):
            return params
        limit, max_id = params
        statuses = self.node.store.query_home_timeline(account.id, limit, max_id)
        return _json_response(200, [self._render_status(s) for s in statuses])

    def _tag_timeline(self, request: HttpRequest, tag: str) -> HttpResponse:
        params = self._page_params(request)
        if isinstance(params, HttpResponse):
            return params
        limit, max_id = params
        statuses = self.node.store.query_tag_timeline(tag.lstrip("#").lower(), limit, max_id)
        return _json_response(200, [self._render_status(s) for s in statuses])

    def _relationship(self, me: Account, target: Account) -> dict[str, Any]:
        relation = self.node.store.get_follow(me.actor_uri, target.id)
        return {
            "id": str(target.id),
            "following": relation is not None and relation.state == "accepted",
            "requested": relation is not None and relation.state == "pending",
        }

    def _follow(self, request: HttpRequest, account_id_text: str) -> HttpResponse:
        me = self._bearer_account(request)
        if me is None:
            return _error(401, "Unauthorized", "missing or invalid bearer token")
        try:
            target_id = int(account_id_text)
        except ValueError:
            return _error(404, "UnknownAccount", "account ids are numeric")
        target = self.node.store.get_account(target_id)
        if target is None:
            return _error(404, "UnknownAccount", f"no account {target_id}")
        if target.id == me.id:
            return _error(422, "CannotFollowSelf", "an account cannot follow itself")

        existing = self.node.store.get_follow(me.actor_uri, target.id)
        if existing is not None:
            # Repeat request: report current state, send nothing new.
            return _json_response(200, self._relationship(me, target))

        follow_activity_id = f"{me.actor_uri}#follows/{target.id}"
        if not target.is_remote:
            self.node.store.upsert_follow(
                follower_actor_uri=me.actor_uri,
                followee_account_id=target.id,
                state="accepted",
                follow_activity_id=follow_activity_id,
                created_at=self.node.clock(),
            )
            return _json_response(200, self._relationship(me, target))

        self.node.store.upsert_follow(
            follower_actor_uri=me.actor_uri,
            followee_account_id=target.id,
            state="pending",
            follow_activity_id=follow_activity_id,
            created_at=self.node.clock(),
        )
        follow = Activity(
            id=follow_activity_id,
            kind=ActivityKind.FOLLOW,
            actor=me.actor_uri,
            object=target.actor_uri,
            to=(target.actor_uri,),
        )
        self.node.engine.enqueue(follow, signer=me, target_inbox=target.inbox_uri)
        domain = uri_host(target.actor_uri)
        if domain:
            self.node.store.record_peer(domain.lower(), target.inbox_uri)
        return _json_response(200, self._relationship(me, target))

    def _lookup(self, request: HttpRequest) -> HttpResponse:
        acct = request.query.get("acct")
        if not acct:
            return _error(400, "MissingAcct", "acct query parameter required")
        try:
            handle = parse_acct(acct, self.node.domain)
        except MalformedHandle as exc:
            return _error(404, "MalformedHandle", str(exc))
        if handle.domain == self.node.domain.lower():
            account = self.node.store.get_local_account(handle.username)
            if account is None:
                if self.node.store.is_tombstoned(self.node.actor_uri_for(handle.username)):
                    return _error(410, "Gone", f"account {handle.username} was deleted")
                return _error(404, "UnknownUser", f"no local account {handle.username}")
            return _json_response(200, self._render_account(account))
        try:
            account = self.node.resolve_account(handle)
        except (ResolutionFailed, ActorFetchFailed) as exc:
            return _error(404, exc.reason, str(exc))
        return _json_response(200, self._render_account(account))
