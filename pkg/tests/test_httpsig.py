import json
from datetime import datetime, timedelta, timezone

import pytest

from mothfed.activitypub import Actor, ActorKind, PublicKeySpec
from mothfed.errors import (
    ActorFetchFailed,
    BadSignature,
    DigestMismatch,
    NoSignature,
    StaleDate,
)
from mothfed.httpsig import (
    SIGNED_HEADERS,
    body_digest,
    generate_rsa_keypair,
    parse_signature_header,
    sign_request,
    verify_signature,
)

from .support import FIXED_PRIVATE_PEM, FIXED_PUBLIC_PEM, independent_verify

NOW = datetime(2024, 1, 1, 12, 0, 0, tzinfo=timezone.utc)
ACTOR_URI = "https://a.test/users/alice"
KEY_ID = f"{ACTOR_URI}#main-key"
URL = "https://b.test/users/bob/inbox"
TARGET = "/users/bob/inbox"
BODY = json.dumps({"type": "Like", "actor": ACTOR_URI}).encode()


def actor_with_key(public_pem, owner=ACTOR_URI, actor_id=ACTOR_URI):
    return Actor(
        id=actor_id,
        kind=ActorKind.PERSON,
        preferred_username="alice",
        inbox=f"{actor_id}/inbox",
        public_key=PublicKeySpec(f"{actor_id}#main-key", owner, public_pem),
    )


def fetcher(public_pem, **kwargs):
    actor = actor_with_key(public_pem, **kwargs)

    def fetch(uri):
        assert uri == ACTOR_URI  # fragment must be stripped before the fetch
        return actor

    return fetch


def signed(date=NOW, body=BODY, private_pem=FIXED_PRIVATE_PEM):
    _, headers = sign_request("POST", URL, body, KEY_ID, private_pem, date)
    return headers


# --- signing output shape ------------------------------------------------------


def test_sign_request_emits_expected_headers():
    params, headers = sign_request("POST", URL, BODY, KEY_ID, FIXED_PRIVATE_PEM, NOW)
    assert headers["Host"] == "b.test"
    assert headers["Date"] == "Mon, 01 Jan 2024 12:00:00 GMT"
    assert headers["Digest"] == body_digest(BODY)
    assert params.key_id == KEY_ID
    assert params.algorithm == "rsa-sha256"
    assert params.headers == SIGNED_HEADERS
    parsed = parse_signature_header(headers["Signature"])
    assert parsed == params


def test_signature_header_is_self_describing():
    headers = signed()
    value = headers["Signature"]
    assert 'keyId="https://a.test/users/alice#main-key"' in value
    assert 'algorithm="rsa-sha256"' in value
    assert 'headers="(request-target) host date digest"' in value


def test_parse_signature_header_requires_key_and_signature():
    with pytest.raises(BadSignature):
        parse_signature_header('keyId="x"')
    with pytest.raises(BadSignature):
        parse_signature_header("")


# --- the independent oracle ---------------------------------------------------------


def test_signatures_verify_under_independent_reimplementation():
    for i in range(5):
        body = json.dumps({"n": i}).encode()
        headers = signed(body=body, date=NOW + timedelta(seconds=i))
        assert independent_verify("POST", URL, headers, body, FIXED_PUBLIC_PEM)


def test_independent_oracle_rejects_tampered_bodies():
    headers = signed()
    assert not independent_verify("POST", URL, headers, BODY + b"x", FIXED_PUBLIC_PEM)


# --- closed-loop verification -------------------------------------------------------


def test_closed_loop_accepts_a_fresh_signature():
    headers = signed()
    actor = verify_signature(
        "POST", TARGET, headers, BODY, fetcher(FIXED_PUBLIC_PEM), now=NOW
    )
    assert actor.id == ACTOR_URI


def test_header_name_lookup_is_case_insensitive():
    headers = {k.upper(): v for k, v in signed().items()}
    actor = verify_signature(
        "POST", TARGET, headers, BODY, fetcher(FIXED_PUBLIC_PEM), now=NOW
    )
    assert actor.id == ACTOR_URI


# --- rejection reasons, one per failure mode ------------------------------------------


def test_missing_signature_header():
    headers = signed()
    del headers["Signature"]
    with pytest.raises(NoSignature) as exc_info:
        verify_signature("POST", TARGET, headers, BODY, fetcher(FIXED_PUBLIC_PEM), NOW)
    assert exc_info.value.reason == "NoSignature"


def test_tampered_body_is_a_digest_mismatch():
    headers = signed()
    with pytest.raises(DigestMismatch) as exc_info:
        verify_signature(
            "POST", TARGET, headers, BODY + b"!", fetcher(FIXED_PUBLIC_PEM), NOW
        )
    assert exc_info.value.reason == "DigestMismatch"


def test_missing_digest_header_is_a_digest_mismatch():
    headers = signed()
    del headers["Digest"]
    with pytest.raises(DigestMismatch):
        verify_signature("POST", TARGET, headers, BODY, fetcher(FIXED_PUBLIC_PEM), NOW)


def test_wrong_key_is_a_bad_signature():
    _, other_public = generate_rsa_keypair(1024)
    headers = signed()
    with pytest.raises(BadSignature) as exc_info:
        verify_signature("POST", TARGET, headers, BODY, fetcher(other_public), NOW)
    assert exc_info.value.reason == "BadSignature"


def test_garbage_key_pem_is_a_bad_signature():
    headers = signed()
    with pytest.raises(BadSignature):
        verify_signature(
            "POST", TARGET, headers, BODY, fetcher("not a pem"), NOW
        )


def test_tampered_target_is_a_bad_signature():
    headers = signed()
    with pytest.raises(BadSignature):
        verify_signature(
            "POST", "/users/mallory/inbox", headers, BODY,
            fetcher(FIXED_PUBLIC_PEM), NOW,
        )


@pytest.mark.parametrize("offset", [-301, 301, 100_000])
def test_dates_outside_the_window_are_stale(offset):
    headers = signed(date=NOW + timedelta(seconds=offset))
    with pytest.raises(StaleDate) as exc_info:
        verify_signature("POST", TARGET, headers, BODY, fetcher(FIXED_PUBLIC_PEM), NOW)
    assert exc_info.value.reason == "StaleDate"


@pytest.mark.parametrize("offset", [-299, 0, 299])
def test_dates_inside_the_window_pass(offset):
    headers = signed(date=NOW + timedelta(seconds=offset))
    verify_signature("POST", TARGET, headers, BODY, fetcher(FIXED_PUBLIC_PEM), NOW)


def test_missing_date_header_is_stale():
    headers = signed()
    del headers["Date"]
    with pytest.raises(StaleDate):
        verify_signature("POST", TARGET, headers, BODY, fetcher(FIXED_PUBLIC_PEM), NOW)


def test_unparseable_date_header_is_stale():
    headers = signed()
    headers["Date"] = "sometime last tuesday"
    with pytest.raises(StaleDate):
        verify_signature("POST", TARGET, headers, BODY, fetcher(FIXED_PUBLIC_PEM), NOW)


def test_signature_must_cover_the_required_headers():
    headers = signed()
    # Re-declare a weaker coverage set; the date-only signature is rejected
    # before any cryptography happens.
    headers["Signature"] = (
        f'keyId="{KEY_ID}",algorithm="rsa-sha256",headers="date",signature="AAAA"'
    )
    with pytest.raises(BadSignature) as exc_info:
        verify_signature("POST", TARGET, headers, BODY, fetcher(FIXED_PUBLIC_PEM), NOW)
    assert "required headers" in str(exc_info.value)


def test_key_owner_must_match_the_actor():
    headers = signed()
    fetch = fetcher(FIXED_PUBLIC_PEM, owner="https://a.test/users/mallory")
    with pytest.raises(BadSignature) as exc_info:
        verify_signature("POST", TARGET, headers, BODY, fetch, NOW)
    assert "owner" in str(exc_info.value)


def test_actor_fetch_failures_propagate_with_their_reason():
    headers = signed()

    def failing_fetch(uri):
        raise ActorFetchFailed(f"cannot reach {uri}")

    with pytest.raises(ActorFetchFailed) as exc_info:
        verify_signature("POST", TARGET, headers, BODY, failing_fetch, NOW)
    assert exc_info.value.reason == "ActorFetchFailed"


def test_corrupted_signature_base64_is_a_bad_signature():
    headers = signed()
    headers["Signature"] = headers["Signature"].replace(
        'signature="', 'signature="@@@'
    )
    with pytest.raises(BadSignature):
        verify_signature("POST", TARGET, headers, BODY, fetcher(FIXED_PUBLIC_PEM), NOW)


def test_stale_date_beats_digest_and_signature_checks():
    # Order matters for operability: the 401 reason should name the first
    # problem a correctly-clocked sender would hit.
    headers = signed(date=NOW - timedelta(seconds=4000))
    del headers["Digest"]
    with pytest.raises(StaleDate):
        verify_signature("POST", TARGET, headers, BODY, fetcher(FIXED_PUBLIC_PEM), NOW)
