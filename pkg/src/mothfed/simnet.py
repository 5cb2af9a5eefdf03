"""In-process multi-instance federation harness over a virtual transport.

Instances talk HTTP to each other through VirtualNet.route, which serializes
real requests (headers, signatures, bodies) but never touches a socket. Time
is a virtual clock, so retry backoff runs in microseconds of wall time and a
fixed seed makes whole scenario runs byte-reproducible.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .config import Config
from .errors import (
    DuplicateDomain,
    ExpectationFailed,
    NotQuiescent,
    TransportError,
)
from .instance import InstanceNode
from .transport import HttpRequest, HttpResponse, Transport

START_TIME = 1_704_067_200.0  # 2024-01-01T00:00:00Z


class VirtualClock:
    def __init__(self, start: float = START_TIME) -> None:
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("virtual time cannot run backwards")
        self._now += seconds

    def advance_to(self, timestamp: float) -> None:
        if timestamp > self._now:
            self._now = timestamp


@dataclass
class FaultRule:
    rule_id: int
    behavior: str  # drop | delay | status | empty_200
    host: str | None = None
    method: str | None = None
    path_contains: str | None = None
    delay_ms: float = 0.0
    status_code: int = 500
    times: int | None = None  # None = until removed
    applied: int = 0

    def matches(self, request: HttpRequest) -> bool:
        if self.times is not None and self.applied >= self.times:
            return False
        if self.host is not None and request.host.split(":", 1)[0] != self.host:
            return False
        if self.method is not None and request.method.upper() != self.method.upper():
            return False
        if self.path_contains is not None and self.path_contains not in request.target:
            return False
        return True


@dataclass(frozen=True)
class LogEntry:
    from_domain: str
    method: str
    url: str
    status: int | None
    fault: str | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "from": self.from_domain,
            "method": self.method,
            "url": self.url,
            "status": self.status,
            "fault": self.fault,
        }


class VirtualTransport(Transport):
    """Transport bound to one sender; everything goes through net.route."""

    def __init__(self, net: "VirtualNet", from_domain: str) -> None:
        self.net = net
        self.from_domain = from_domain

    def request(self, request: HttpRequest) -> HttpResponse:
        return self.net.route(self.from_domain, request)


class VirtualNet:
    def __init__(
        self,
        seed: int = 0,
        start_time: float = START_TIME,
        backend: str = "memory",
        storage_root: str | None = None,
        key_bits: int = 1024,
    ) -> None:
        self.seed = seed
        self.clock = VirtualClock(start_time)
        self.backend = backend
        self.storage_root = Path(storage_root) if storage_root else None
        self.key_bits = key_bits
        self.instances: dict[str, InstanceNode] = {}
        self._instance_users: dict[str, list[str]] = {}
        self.log: list[LogEntry] = []
        self._faults: dict[int, FaultRule] = {}
        self._fault_seq = 0

    # --- instances -------------------------------------------------------------

    def _token_for(self, domain: str, username: str) -> str:
        seedling = f"{self.seed}:{domain}:{username}".encode("utf-8")
        return hashlib.sha256(seedling).hexdigest()[:32]

    def _config_for(self, domain: str) -> Config:
        if self.backend == "file":
            if self.storage_root is None:
                raise ValueError("file backend needs a storage_root")
            path = str(self.storage_root / domain)
        else:
            path = None
        return Config(
            domain=domain,
            storage_backend=self.backend,
            storage_path=path,
            test_mode=True,
            key_bits=self.key_bits,
        )

    def spawn_instance(self, domain: str, users: list[str] | None = None) -> InstanceNode:
        if domain in self.instances:
            raise DuplicateDomain(domain)
        node = InstanceNode(
            self._config_for(domain),
            transport=VirtualTransport(self, domain),
            clock=self.clock.now,
        )
        for username in users or []:
            node.ensure_user(username, token=self._token_for(domain, username))
        self.instances[domain] = node
        self._instance_users[domain] = list(users or [])
        return node

    def kill_instance(self, domain: str) -> None:
        """Drop the process state without any orderly shutdown."""
        self.instances.pop(domain)

    def respawn_instance(self, domain: str) -> InstanceNode:
        """Bring a killed instance back over the same storage root."""
        if domain in self.instances:
            raise DuplicateDomain(domain)
        node = InstanceNode(
            self._config_for(domain),
            transport=VirtualTransport(self, domain),
            clock=self.clock.now,
        )
        for username in self._instance_users.get(domain, []):
            node.ensure_user(username, token=self._token_for(domain, username))
        self.instances[domain] = node
        return node

    def node(self, domain: str) -> InstanceNode:
        return self.instances[domain]

    def user_token(self, domain: str, username: str) -> str:
        node = self.instances[domain]
        account = node.store.get_local_account(username)
        if account is None or account.id is None:
            raise KeyError(f"no user {username} on {domain}")
        token = node.store.token_for_account(account.id)
        if token is None:
            raise KeyError(f"user {username} on {domain} has no token")
        return token

    # --- faults -----------------------------------------------------------------

    def inject_fault(
        self,
        behavior: str,
        host: str | None = None,
        method: str | None = None,
        path_contains: str | None = None,
        delay_ms: float = 0.0,
        status_code: int = 500,
        times: int | None = None,
    ) -> int:
        if behavior not in ("drop", "delay", "status", "empty_200"):
            raise ValueError(f"unknown fault behavior {behavior!r}")
        self._fault_seq += 1
        rule = FaultRule(
            rule_id=self._fault_seq,
            behavior=behavior,
            host=host,
            method=method,
            path_contains=path_contains,
            delay_ms=delay_ms,
            status_code=status_code,
            times=times,
        )
        self._faults[rule.rule_id] = rule
        return rule.rule_id

    def remove_fault(self, rule_id: int) -> None:
        self._faults.pop(rule_id, None)

    def _match_fault(self, request: HttpRequest) -> FaultRule | None:
        for rule in self._faults.values():
            if rule.matches(request):
                return rule
        return None

    # --- transport -----------------------------------------------------------------

    def route(self, from_domain: str, request: HttpRequest) -> HttpResponse:
        fault_label = None
        rule = self._match_fault(request)
        if rule is not None:
            rule.applied += 1
            label = f"{rule.behavior}#{rule.rule_id}"
            if rule.behavior == "drop":
                self._log(from_domain, request, None, label)
                raise TransportError(f"dropped by fault rule {rule.rule_id}")
            if rule.behavior == "status":
                self._log(from_domain, request, rule.status_code, label)
                return HttpResponse(
                    rule.status_code,
                    {"Content-Type": "application/json"},
                    json.dumps({"error": "FaultInjected"}).encode("utf-8"),
                )
            if rule.behavior == "empty_200":
                # The classic silent failure: success code, nothing inside.
                self._log(from_domain, request, 200, label)
                return HttpResponse(200, {}, b"")
            if rule.behavior == "delay":
                self.clock.advance(rule.delay_ms / 1000.0)
                fault_label = label

        host = request.host.split(":", 1)[0]
        node = self.instances.get(host)
        if node is None:
            self._log(from_domain, request, None, fault_label)
            raise TransportError(f"no instance serves {host}")
        headers = dict(request.headers)
        headers.setdefault("Host", request.host)
        response = node.handle_http(
            HttpRequest(request.method, request.url, headers, request.body)
        )
        self._log(from_domain, request, response.status, fault_label)
        return response

    def _log(
        self, from_domain: str, request: HttpRequest, status: int | None, fault: str | None
    ) -> None:
        self.log.append(
            LogEntry(
                from_domain=from_domain,
                method=request.method.upper(),
                url=request.url,
                status=status,
                fault=fault,
            )
        )

    def log_json(self) -> bytes:
        return json.dumps(
            [entry.to_dict() for entry in self.log], sort_keys=True
        ).encode("utf-8")

    # --- scheduling ------------------------------------------------------------------

    def pending_total(self) -> int:
        return sum(node.pending_deliveries() for node in self.instances.values())

    def run_until_quiet(self, max_steps: int = 200) -> int:
        """Drive every delivery queue until nothing is pending.

        Terminal failures count as quiet: the queue gave up, which is an
        answer. Raises NotQuiescent only when the step budget runs out with
        work still scheduled.
        """
        if max_steps <= 0:
            raise ValueError("max_steps must be positive")
        steps = 0
        while True:
            if self.pending_total() == 0:
                return steps
            if steps >= max_steps:
                raise NotQuiescent(
                    f"{self.pending_total()} tasks still pending after {max_steps} steps"
                )
            due_times = [
                t
                for node in self.instances.values()
                if (t := node.next_pending_time()) is not None
            ]
            if due_times:
                self.clock.advance_to(min(due_times))
            for domain in sorted(self.instances):
                self.instances[domain].process_deliveries()
            steps += 1

    # --- client-side helpers -------------------------------------------------------

    def api(
        self,
        domain: str,
        method: str,
        path: str,
        token: str | None = None,
        body: dict[str, Any] | None = None,
    ) -> HttpResponse:
        headers: dict[str, str] = {"Accept": "application/json"}
        if token is not None:
            headers["Authorization"] = f"Bearer {token}"
        data = b""
        if body is not None:
            data = json.dumps(body).encode("utf-8")
            headers["Content-Type"] = "application/json"
        request = HttpRequest(method, f"http://{domain}{path}", headers, data)
        return self.route("client", request)

    def post_status(
        self,
        domain: str,
        username: str,
        text: str,
        visibility: str = "public",
        in_reply_to_id: int | None = None,
    ) -> dict[str, Any]:
        body: dict[str, Any] = {"status": text, "visibility": visibility}
        if in_reply_to_id is not None:
            body["in_reply_to_id"] = in_reply_to_id
        response = self.api(
            domain,
            "POST",
            "/api/v1/statuses",
            token=self.user_token(domain, username),
            body=body,
        )
        payload = json.loads(response.body)
        if response.status != 200:
            raise ExpectationFailed(
                f"post_status by {username}@{domain} failed: {response.status} {payload}"
            )
        return payload

    def lookup(self, domain: str, acct: str) -> HttpResponse:
        return self.api(domain, "GET", f"/api/v1/accounts/lookup?acct={acct}")

    def follow(self, domain: str, username: str, target_acct: str) -> dict[str, Any]:
        token = self.user_token(domain, username)
        found = self.api(domain, "GET", f"/api/v1/accounts/lookup?acct={target_acct}")
        if found.status != 200:
            raise ExpectationFailed(
                f"lookup of {target_acct} on {domain} failed: "
                f"{found.status} {found.body.decode('utf-8', 'replace')}"
            )
        target = json.loads(found.body)
        response = self.api(
            domain, "POST", f"/api/v1/accounts/{target['id']}/follow", token=token
        )
        if response.status != 200:
            raise ExpectationFailed(
                f"follow of {target_acct} by {username}@{domain} failed: {response.status}"
            )
        return json.loads(response.body)

    def home_timeline(self, domain: str, username: str, limit: int = 40) -> list[dict[str, Any]]:
        response = self.api(
            domain,
            "GET",
            f"/api/v1/timelines/home?limit={limit}",
            token=self.user_token(domain, username),
        )
        if response.status != 200:
            raise ExpectationFailed(f"home timeline failed: {response.status}")
        return json.loads(response.body)

    def tag_timeline(self, domain: str, tag: str, limit: int = 40) -> list[dict[str, Any]]:
        response = self.api(domain, "GET", f"/api/v1/timelines/tag/{tag}?limit={limit}")
        if response.status != 200:
            raise ExpectationFailed(f"tag timeline failed: {response.status}")
        return json.loads(response.body)

    def delete_account(self, domain: str, username: str) -> dict[str, int]:
        return self.instances[domain].delete_local_account(username)

    # --- log queries ------------------------------------------------------------------

    def log_entries(
        self,
        method: str | None = None,
        url_contains: str | None = None,
        status: int | None = None,
        from_domain: str | None = None,
        start: int = 0,
    ) -> list[LogEntry]:
        found = []
        for entry in self.log[start:]:
            if method is not None and entry.method != method.upper():
                continue
            if url_contains is not None and url_contains not in entry.url:
                continue
            if status is not None and entry.status != status:
                continue
            if from_domain is not None and entry.from_domain != from_domain:
                continue
            found.append(entry)
        return found

    def outbox_gets(self) -> list[LogEntry]:
        return [
            e
            for e in self.log
            if e.method == "GET" and e.url.split("?", 1)[0].rstrip("/").endswith("/outbox")
        ]


# --- scenario scripts ------------------------------------------------------------


class ScenarioRunner:
    """Executes a JSON scenario: a name plus an ordered list of step objects."""

    def __init__(self, net: VirtualNet) -> None:
        self.net = net
        self._fault_aliases: dict[str, int] = {}
        self._log_mark = 0

    @staticmethod
    def load(path: str | Path) -> dict[str, Any]:
        with open(path, "r", encoding="utf-8") as handle:
            scenario = json.load(handle)
        if not isinstance(scenario, dict) or "steps" not in scenario:
            raise ExpectationFailed(f"scenario {path} has no steps")
        return scenario

    def run(self, scenario: dict[str, Any]) -> None:
        for index, step in enumerate(scenario["steps"]):
            try:
                self._step(step)
            except ExpectationFailed as exc:
                name = scenario.get("name", "scenario")
                raise ExpectationFailed(
                    f"{name} step {index} ({step.get('op')}): {exc}"
                ) from exc

    def run_file(self, path: str | Path) -> None:
        self.run(self.load(path))

    def _step(self, step: dict[str, Any]) -> None:
        op = step.get("op")
        net = self.net
        if op == "spawn":
            net.spawn_instance(step["domain"], step.get("users", []))
        elif op == "kill":
            net.kill_instance(step["domain"])
        elif op == "respawn":
            net.respawn_instance(step["domain"])
        elif op == "lookup":
            response = net.lookup(step["domain"], step["acct"])
            expected = step.get("expect_status", 200)
            if response.status != expected:
                raise ExpectationFailed(
                    f"lookup {step['acct']} returned {response.status}, wanted {expected}"
                )
        elif op == "follow":
            net.follow(step["domain"], step["as"], step["target"])
        elif op == "post_status":
            net.post_status(
                step["domain"],
                step["as"],
                step["text"],
                visibility=step.get("visibility", "public"),
            )
        elif op == "delete_account":
            net.delete_account(step["domain"], step["user"])
        elif op == "inject_fault":
            rule_id = net.inject_fault(
                behavior=step["behavior"],
                host=step.get("host"),
                method=step.get("method"),
                path_contains=step.get("path_contains"),
                delay_ms=step.get("delay_ms", 0.0),
                status_code=step.get("status_code", 500),
                times=step.get("times"),
            )
            if "id" in step:
                self._fault_aliases[step["id"]] = rule_id
        elif op == "remove_fault":
            net.remove_fault(self._fault_aliases.pop(step["id"]))
        elif op == "run_until_quiet":
            net.run_until_quiet(step.get("max_steps", 200))
        elif op == "advance":
            net.clock.advance(step["seconds"])
        elif op == "mark_log":
            self._log_mark = len(net.log)
        elif op == "expect":
            self._expect(step)
        else:
            raise ExpectationFailed(f"unknown scenario op {op!r}")

    def _expect(self, step: dict[str, Any]) -> None:
        check = step.get("check")
        net = self.net
        if check in ("home_timeline_contains", "home_timeline_absent"):
            timeline = net.home_timeline(step["domain"], step["user"])
            needle = step["content_substring"]
            hit = any(needle in item["content"] for item in timeline)
            if check.endswith("contains") and not hit:
                raise ExpectationFailed(
                    f"{step['user']}@{step['domain']} home timeline lacks {needle!r}"
                )
            if check.endswith("absent") and hit:
                raise ExpectationFailed(
                    f"{step['user']}@{step['domain']} home timeline contains {needle!r}"
                )
        elif check in ("tag_timeline_contains", "tag_timeline_absent"):
            timeline = net.tag_timeline(step["domain"], step["tag"])
            needle = step["content_substring"]
            hit = any(needle in item["content"] for item in timeline)
            if check.endswith("contains") and not hit:
                raise ExpectationFailed(f"tag #{step['tag']} lacks {needle!r}")
            if check.endswith("absent") and hit:
                raise ExpectationFailed(f"tag #{step['tag']} contains {needle!r}")
        elif check in ("account_absent", "account_present"):
            response = net.lookup(step["domain"], step["acct"])
            if check == "account_absent" and response.status not in (404, 410):
                raise ExpectationFailed(
                    f"lookup {step['acct']} on {step['domain']} returned {response.status}"
                )
            if check == "account_present" and response.status != 200:
                raise ExpectationFailed(
                    f"lookup {step['acct']} on {step['domain']} returned {response.status}"
                )
        elif check == "log_count":
            entries = net.log_entries(
                method=step.get("method"),
                url_contains=step.get("url_contains"),
                status=step.get("status"),
                from_domain=step.get("from"),
                start=self._log_mark if step.get("since_mark") else 0,
            )
            count = len(entries)
            if "equals" in step and count != step["equals"]:
                raise ExpectationFailed(
                    f"log count {count}, wanted {step['equals']} "
                    f"(filter {step.get('url_contains')!r})"
                )
            if "min" in step and count < step["min"]:
                raise ExpectationFailed(f"log count {count} < min {step['min']}")
            if "max" in step and count > step["max"]:
                raise ExpectationFailed(f"log count {count} > max {step['max']}")
        elif check == "no_outbox_get":
            hits = net.outbox_gets()
            if hits:
                raise ExpectationFailed(f"outbox GETs in transport log: {hits}")
        elif check == "pending_zero":
            if net.pending_total() != 0:
                raise ExpectationFailed(f"{net.pending_total()} deliveries still pending")
        elif check == "failures_have_reasons":
            for domain in sorted(net.instances):
                for task in net.instances[domain].store.all_tasks():
                    if task.terminal and not task.result:
                        raise ExpectationFailed(
                            f"terminal task {task.task_id} on {domain} has no recorded reason"
                        )
        elif check == "status_count":
            node = net.instances[step["domain"]]
            account = node.store.get_local_account(step["user"])
            count = (
                len(node.store.statuses_by_account(account.id)) if account is not None else 0
            )
            if count != step["equals"]:
                raise ExpectationFailed(
                    f"{step['user']}@{step['domain']} has {count} statuses, "
                    f"wanted {step['equals']}"
                )
        else:
            raise ExpectationFailed(f"unknown expect check {check!r}")
