"""Command line entry points: serve, user create, probe, keygen.

Exit codes: 0 success, 1 runtime error, 2 usage error (argparse's own).
"""
from __future__ import annotations

import argparse
import json
import signal
import sys
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable

from .activitypub import validate_actor_document
from .config import Config, load_config
from .errors import BindFailed, MalformedHandle, MothError
from .httpsig import generate_rsa_keypair
from .identity import parse_acct
from .instance import InstanceNode
from .transport import HttpRequest, Transport, TransportError, UrllibTransport


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moth-fed",
        description="Mastodon-compatible ActivityPub federation server",
    )
    parser.add_argument("--config", help="path to a JSON config file")
    parser.add_argument("--domain", help="override the configured domain")
    parser.add_argument("--port", type=int, help="override the configured port")
    parser.add_argument(
        "--store", help="storage: 'memory' or 'file:<path>' (overrides config)"
    )
    parser.add_argument(
        "--test-mode",
        action="store_true",
        help="permit plain http URIs (development and harness use)",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("serve", help="run the server until signaled")

    user = commands.add_parser("user", help="local account management")
    user_commands = user.add_subparsers(dest="user_command", required=True)
    create = user_commands.add_parser("create", help="provision a local account")
    create.add_argument("name")

    probe = commands.add_parser("probe", help="walk discovery for a remote handle")
    probe.add_argument("handle")

    keygen = commands.add_parser("keygen", help="rotate a local account's RSA keypair")
    keygen.add_argument("name")
    return parser


def _load(args: argparse.Namespace) -> Config:
    defaults = {"domain": "localhost"}
    config = load_config(args.config, defaults=defaults)
    if args.domain:
        config.domain = args.domain
    if args.port:
        config.port = args.port
    if args.store:
        from .config import _parse_store

        config.storage_backend, config.storage_path = _parse_store(args.store)
    if args.test_mode:
        config.test_mode = True
    return config.validate()


# --- serve -----------------------------------------------------------------


def _handler_for(node: InstanceNode) -> type[BaseHTTPRequestHandler]:
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, format: str, *args) -> None:
            pass

        def _dispatch(self) -> None:
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else b""
            host = self.headers.get("Host") or node.domain
            scheme = "http" if node.config.test_mode else "https"
            request = HttpRequest(
                method=self.command,
                url=f"{scheme}://{host}{self.path}",
                headers={k: v for k, v in self.headers.items()},
                body=body,
            )
            response = node.handle_http(request)
            if response.status in (401, 400, 403) and response.body:
                # The one place rejections would otherwise be invisible.
                sys.stderr.write(
                    f"rejected {self.command} {self.path}: "
                    f"{response.body.decode('utf-8', 'replace')}\n"
                )
            self.send_response(response.status)
            for name, value in response.headers.items():
                self.send_header(name, value)
            self.send_header("Content-Length", str(len(response.body)))
            self.end_headers()
            self.wfile.write(response.body)

        def do_GET(self) -> None:
            self._dispatch()

        def do_POST(self) -> None:
            self._dispatch()

    return Handler


def cmd_serve(config: Config) -> int:
    node = InstanceNode(config)
    try:
        server = ThreadingHTTPServer((config.bind, config.port), _handler_for(node))
    except OSError as exc:
        raise BindFailed(f"cannot bind {config.bind}:{config.port}: {exc}") from exc

    stop = threading.Event()

    def pump() -> None:
        while not stop.wait(1.0):
            try:
                node.process_deliveries()
            except Exception as exc:  # noqa: BLE001 - the pump must survive
                sys.stderr.write(f"delivery pump error: {exc}\n")

    pump_thread = threading.Thread(target=pump, name="delivery-pump", daemon=True)
    pump_thread.start()

    def shutdown(signum, frame) -> None:
        stop.set()
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGINT, shutdown)
    signal.signal(signal.SIGTERM, shutdown)

    print(f"serving {config.domain} on {config.bind}:{config.port}", flush=True)
    try:
        server.serve_forever()
    finally:
        stop.set()
        pump_thread.join(timeout=5)
        server.server_close()
        node.close()
    return 0


# --- user create / keygen -----------------------------------------------------


def cmd_user_create(config: Config, name: str) -> int:
    node = InstanceNode(config)
    try:
        account, token = node.create_user(name)
    finally:
        node.close()
    print(f"created {account.acct} (id {account.id})")
    print(f"actor:  {account.actor_uri}")
    print(f"token:  {token}")
    return 0


def cmd_keygen(config: Config, name: str) -> int:
    node = InstanceNode(config)
    try:
        account = node.store.get_local_account(name)
        if account is None:
            raise MothError(f"no local account {name}")
        private_pem, public_pem = generate_rsa_keypair(config.key_bits)
        node.store.save_keypair(name, private_pem, public_pem)
        refreshed = node.store.upsert_account(
            type(account)(
                id=account.id,
                username=account.username,
                acct=account.acct,
                display_name=account.display_name,
                actor_uri=account.actor_uri,
                inbox_uri=account.inbox_uri,
                public_key_pem=public_pem,
                created_at=account.created_at,
            )
        )
    finally:
        node.close()
    print(f"rotated keypair for {refreshed.acct}")
    return 0


# --- probe -----------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeStep:
    name: str
    ok: bool
    detail: str


def run_probe(
    handle_text: str,
    local_domain: str,
    transport: Transport,
    test_mode: bool = False,
) -> list[ProbeStep]:
    """Walk WebFinger then the actor document, reporting every step."""
    steps: list[ProbeStep] = []
    try:
        handle = parse_acct(handle_text, local_domain)
    except MalformedHandle as exc:
        steps.append(ProbeStep("parse handle", False, str(exc)))
        return steps
    steps.append(ProbeStep("parse handle", True, str(handle)))

    scheme = "http" if test_mode else "https"
    from urllib.parse import quote

    webfinger_url = (
        f"{scheme}://{handle.domain}/.well-known/webfinger"
        f"?resource={quote(handle.acct_uri, safe='')}"
    )
    try:
        response = transport.request(
            HttpRequest("GET", webfinger_url, {"Accept": "application/jrd+json"})
        )
    except TransportError as exc:
        steps.append(ProbeStep("WebFinger request", False, f"{webfinger_url}: {exc}"))
        return steps
    if response.status != 200:
        steps.append(
            ProbeStep("WebFinger request", False, f"{webfinger_url} -> {response.status}")
        )
        return steps
    if not response.body:
        steps.append(
            ProbeStep("WebFinger request", False, f"{webfinger_url} -> WebFinger body empty")
        )
        return steps
    steps.append(ProbeStep("WebFinger request", True, f"{webfinger_url} -> 200"))

    from .identity import JrdDocument
    from .errors import NoSelfLink, ResolutionFailed

    try:
        document = JrdDocument.from_json(response.body)
    except ResolutionFailed as exc:
        steps.append(ProbeStep("WebFinger parse", False, str(exc)))
        return steps
    try:
        actor_uri = document.self_link()
    except NoSelfLink:
        steps.append(ProbeStep("WebFinger parse", False, "no rel=self ActivityPub link"))
        return steps
    steps.append(ProbeStep("WebFinger parse", True, f"self link {actor_uri}"))

    try:
        actor_response = transport.request(
            HttpRequest("GET", actor_uri, {"Accept": "application/activity+json"})
        )
    except TransportError as exc:
        steps.append(ProbeStep("actor fetch", False, f"{actor_uri}: {exc}"))
        return steps
    if actor_response.status != 200:
        steps.append(ProbeStep("actor fetch", False, f"{actor_uri} -> {actor_response.status}"))
        return steps
    if not actor_response.body:
        steps.append(ProbeStep("actor fetch", False, f"{actor_uri} -> empty body"))
        return steps
    steps.append(ProbeStep("actor fetch", True, f"{actor_uri} -> 200"))

    try:
        actor = validate_actor_document(actor_response.body)
    except MothError as exc:
        steps.append(ProbeStep("actor validation", False, f"{exc.reason}: {exc}"))
        return steps
    fields = (
        f"type={actor.kind.value} preferredUsername={actor.preferred_username} "
        f"inbox={actor.inbox} key={'present' if actor.public_key.pem.strip() else 'absent'}"
    )
    steps.append(ProbeStep("actor validation", True, fields))

    from cryptography.hazmat.primitives import serialization

    try:
        serialization.load_pem_public_key(actor.public_key.pem.encode("ascii"))
        steps.append(ProbeStep("public key parse", True, actor.public_key.key_id))
    except (ValueError, UnicodeEncodeError) as exc:
        steps.append(ProbeStep("public key parse", False, str(exc)))
    return steps


def cmd_probe(config: Config, handle_text: str, transport: Transport | None = None) -> int:
    steps = run_probe(
        handle_text,
        config.domain,
        transport if transport is not None else UrllibTransport(),
        test_mode=config.test_mode,
    )
    failed = False
    for step in steps:
        marker = "ok " if step.ok else "FAIL"
        print(f"[{marker}] {step.name}: {step.detail}")
        failed = failed or not step.ok
    return 1 if failed else 0


# --- entry ---------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load(args)
        if args.command == "serve":
            return cmd_serve(config)
        if args.command == "user":
            return cmd_user_create(config, args.name)
        if args.command == "probe":
            return cmd_probe(config, args.handle)
        if args.command == "keygen":
            return cmd_keygen(config, args.name)
    except MothError as exc:
        print(f"error: {exc.reason}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
