"""Draft-cavage HTTP signatures with RSA-SHA256.

Outbound requests are signed over (request-target), host, date, and digest;
inbound verification recomputes the digest, checks the date against a skew
window, fetches the actor owning the named key, and verifies the RSA
signature. Every failure mode has its own exception so the HTTP layer can
return a distinct 401 reason.
"""
from __future__ import annotations

import base64
import hashlib
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from email.utils import format_datetime, parsedate_to_datetime
from typing import Callable
from urllib.parse import urlsplit

from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.exceptions import InvalidSignature

from .activitypub import Actor
from .errors import (
    ActorFetchFailed,
    BadSignature,
    DigestMismatch,
    NoSignature,
    StaleDate,
)

ALGORITHM = "rsa-sha256"
SIGNED_HEADERS = ("(request-target)", "host", "date", "digest")


@dataclass(frozen=True)
class SignatureParams:
    key_id: str
    algorithm: str
    headers: tuple[str, ...]
    signature: str  # base64


def generate_rsa_keypair(bits: int = 2048) -> tuple[str, str]:
    """Fresh RSA keypair as (private PEM, public PEM) strings."""
    key = rsa.generate_private_key(public_exponent=65537, key_size=bits)
    private_pem = key.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    ).decode("ascii")
    public_pem = key.public_key().public_bytes(
        serialization.Encoding.PEM,
        serialization.PublicFormat.SubjectPublicKeyInfo,
    ).decode("ascii")
    return private_pem, public_pem


def body_digest(body: bytes) -> str:
    return "SHA-256=" + base64.b64encode(hashlib.sha256(body).digest()).decode("ascii")


def _request_target(method: str, url: str) -> tuple[str, str]:
    """(host, target) pair for a request URL; target keeps the query string."""
    parts = urlsplit(url)
    host = parts.netloc
    target = parts.path or "/"
    if parts.query:
        target = f"{target}?{parts.query}"
    return host, target


def signing_string(
    method: str,
    target: str,
    header_values: dict[str, str],
    header_names: tuple[str, ...],
) -> str:
    lines = []
    for name in header_names:
        if name == "(request-target)":
            lines.append(f"(request-target): {method.lower()} {target}")
        else:
            lines.append(f"{name}: {header_values[name]}")
    return "\n".join(lines)


def sign_request(
    method: str,
    url: str,
    body: bytes,
    key_id: str,
    private_key_pem: str,
    date: datetime,
) -> tuple[SignatureParams, dict[str, str]]:
    """Signature params plus the headers to attach to the outbound request."""
    key = serialization.load_pem_private_key(private_key_pem.encode("ascii"), password=None)
    host, target = _request_target(method, url)
    date_text = format_datetime(date.astimezone(timezone.utc), usegmt=True)
    digest = body_digest(body)
    values = {"host": host, "date": date_text, "digest": digest}
    message = signing_string(method, target, values, SIGNED_HEADERS)
    raw = key.sign(message.encode("utf-8"), padding.PKCS1v15(), hashes.SHA256())
    signature = base64.b64encode(raw).decode("ascii")
    params = SignatureParams(
        key_id=key_id,
        algorithm=ALGORITHM,
        headers=SIGNED_HEADERS,
        signature=signature,
    )
    header = (
        f'keyId="{key_id}",algorithm="{ALGORITHM}",'
        f'headers="{" ".join(SIGNED_HEADERS)}",signature="{signature}"'
    )
    return params, {
        "Host": host,
        "Date": date_text,
        "Digest": digest,
        "Signature": header,
    }


_PARAM_RE = re.compile(r'([A-Za-z]+)="([^"]*)"')


def parse_signature_header(value: str) -> SignatureParams:
    fields = {m.group(1).lower(): m.group(2) for m in _PARAM_RE.finditer(value)}
    key_id = fields.get("keyid")
    signature = fields.get("signature")
    if not key_id or not signature:
        raise BadSignature("signature header lacks keyId or signature")
    headers = tuple(fields.get("headers", "date").lower().split())
    return SignatureParams(
        key_id=key_id,
        algorithm=fields.get("algorithm", ALGORITHM),
        headers=headers,
        signature=signature,
    )


def verify_signature(
    method: str,
    target: str,
    headers: dict[str, str],
    body: bytes,
    actor_fetch: Callable[[str], Actor],
    now: datetime,
    skew_seconds: float = 300.0,
) -> Actor:
    """Verify a signed request and return the actor owning the signing key.

    actor_fetch maps an actor URI to its Actor document and may raise
    ActorFetchFailed. Raises NoSignature, StaleDate, DigestMismatch,
    BadSignature, or ActorFetchFailed; each carries its own reason string.
    """
    lowered = {k.lower(): v for k, v in headers.items()}

    raw_signature = lowered.get("signature")
    if not raw_signature:
        raise NoSignature("request has no Signature header")
    params = parse_signature_header(raw_signature)

    date_text = lowered.get("date")
    if not date_text:
        raise StaleDate("request has no Date header")
    try:
        request_time = parsedate_to_datetime(date_text)
    except (TypeError, ValueError) as exc:
        raise StaleDate(f"unparseable Date header: {date_text!r}") from exc
    if request_time.tzinfo is None:
        request_time = request_time.replace(tzinfo=timezone.utc)
    offset = abs((now.astimezone(timezone.utc) - request_time).total_seconds())
    if offset > skew_seconds:
        raise StaleDate(f"Date is {offset:.0f}s from now (window {skew_seconds:.0f}s)")

    claimed_digest = lowered.get("digest")
    if not claimed_digest:
        raise DigestMismatch("request has no Digest header")
    if claimed_digest.strip() != body_digest(body):
        raise DigestMismatch("body does not match the Digest header")

    required = {"(request-target)", "host", "date", "digest"}
    if not required.issubset(set(params.headers)):
        missing = ", ".join(sorted(required - set(params.headers)))
        raise BadSignature(f"signature does not cover required headers: {missing}")

    actor_uri = params.key_id.split("#", 1)[0]
    actor = actor_fetch(actor_uri)
    key_owner = actor.public_key.owner or actor.id
    if key_owner != actor.id:
        raise BadSignature("key owner does not match the actor document")

    try:
        values = {
            name: lowered[name] for name in params.headers if name != "(request-target)"
        }
    except KeyError as exc:
        raise BadSignature(f"signed header {exc.args[0]!r} absent from request") from exc
    message = signing_string(method, target, values, params.headers)

    try:
        public_key = serialization.load_pem_public_key(
            actor.public_key.pem.encode("ascii")
        )
    except (ValueError, UnicodeEncodeError) as exc:
        raise BadSignature(f"actor's public key is unusable: {exc}") from exc
    try:
        raw = base64.b64decode(params.signature, validate=True)
    except ValueError as exc:
        raise BadSignature("signature is not valid base64") from exc
    try:
        public_key.verify(raw, message.encode("utf-8"), padding.PKCS1v15(), hashes.SHA256())
    except InvalidSignature as exc:
        raise BadSignature("signature does not verify against the actor's key") from exc
    except (ValueError, TypeError) as exc:
        raise BadSignature(f"signature verification failed: {exc}") from exc

    return actor
