"""CLI commands: config loading, probe walk, account management, serving."""
import json
import signal
import socket
import subprocess
import sys
import time
import urllib.error
import urllib.request
from urllib.parse import quote

import pytest

from mothfed.cli import cmd_probe, cmd_serve, main, run_probe
from mothfed.config import Config, load_config
from mothfed.errors import BindFailed, ConfigError
from mothfed.instance import InstanceNode
from mothfed.simnet import VirtualNet, VirtualTransport
from mothfed.storage import open_store
from mothfed.transport import HttpRequest, Transport, TransportError


class DictTransport(Transport):
    """Serves canned responses keyed by exact URL."""

    def __init__(self, responses):
        self.responses = responses

    def request(self, request: HttpRequest):
        try:
            return self.responses[request.url]
        except KeyError:
            raise TransportError(f"unscripted URL {request.url}")


def _free_port() -> int:
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        return probe.getsockname()[1]


class TestConfig:
    def test_dict_round_trip(self):
        config = Config(domain="x.test", port=8001, test_mode=True)
        assert Config.from_dict(config.to_dict()) == config

    def test_env_beats_file_beats_defaults(self, tmp_path):
        path = tmp_path / "server.json"
        path.write_text(json.dumps({"domain": "file.test", "port": 1111}))
        config = load_config(
            str(path),
            env={"MOTH_DOMAIN": "env.test"},
            defaults={"domain": "default.test", "port": 9999},
        )
        assert config.domain == "env.test"
        assert config.port == 1111

        config = load_config(
            str(path),
            env={
                "MOTH_PORT": "2222",
                "MOTH_STORE": f"file:{tmp_path / 'data'}",
            },
        )
        assert config.domain == "file.test"
        assert config.port == 2222
        assert config.storage_backend == "file"
        assert config.storage_path == str(tmp_path / "data")

    def test_memory_store_env(self):
        config = load_config(env={"MOTH_DOMAIN": "x.test", "MOTH_STORE": "memory"})
        assert config.storage_backend == "memory"
        assert config.storage_path is None

    @pytest.mark.parametrize(
        "store", ["file:", "redis", "file"], ids=["empty-path", "unknown", "no-colon"]
    )
    def test_bad_store_env_rejected(self, store):
        with pytest.raises(ConfigError):
            load_config(env={"MOTH_DOMAIN": "x.test", "MOTH_STORE": store})

    def test_port_env_must_be_integer(self):
        with pytest.raises(ConfigError):
            load_config(env={"MOTH_DOMAIN": "x.test", "MOTH_PORT": "eleven"})

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(str(tmp_path / "absent.json"), env={})

    def test_config_file_must_be_json_object(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_config(str(bad), env={})
        bad.write_text("{nope")
        with pytest.raises(ConfigError):
            load_config(str(bad), env={})

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="mystery"):
            Config.from_dict({"domain": "x.test", "mystery": 1})

    def test_domain_is_required(self):
        with pytest.raises(ConfigError):
            Config.from_dict({"port": 8420})

    @pytest.mark.parametrize(
        "overrides",
        [
            {"domain": ""},
            {"domain": "spaced out"},
            {"domain": "a/b"},
            {"port": 0},
            {"port": 70000},
            {"storage_backend": "redis"},
            {"storage_backend": "file"},
            {"skew_seconds": 0.0},
            {"retry_base_seconds": -1.0},
            {"max_attempts": 0},
            {"key_bits": 128},
        ],
    )
    def test_validate_rejects(self, overrides):
        values = {"domain": "ok.test", **overrides}
        with pytest.raises(ConfigError):
            Config(**values).validate()

    def test_base_url_scheme_follows_test_mode(self):
        assert Config(domain="x.test").base_url == "https://x.test"
        assert Config(domain="x.test", test_mode=True).base_url == "http://x.test"


@pytest.fixture()
def remote_world():
    net = VirtualNet(seed=6)
    net.spawn_instance("remote.test", ["bob"])
    return net, VirtualTransport(net, "prober")


class TestProbe:
    def test_full_walk_reports_every_step(self, remote_world):
        _, transport = remote_world
        steps = run_probe("bob@remote.test", "probe.local", transport, test_mode=True)
        assert [step.name for step in steps] == [
            "parse handle",
            "WebFinger request",
            "WebFinger parse",
            "actor fetch",
            "actor validation",
            "public key parse",
        ]
        assert all(step.ok for step in steps)
        assert steps[-1].detail.endswith("#main-key")

    def test_empty_webfinger_body_is_named_explicitly(self, remote_world):
        net, transport = remote_world
        net.inject_fault(
            behavior="empty_200", host="remote.test", path_contains="webfinger"
        )
        steps = run_probe("bob@remote.test", "probe.local", transport, test_mode=True)
        assert not steps[-1].ok
        assert "WebFinger body empty" in steps[-1].detail

    def test_malformed_handle_stops_at_parse(self, remote_world):
        _, transport = remote_world
        steps = run_probe("not a handle!!", "probe.local", transport, test_mode=True)
        assert len(steps) == 1
        assert steps[0].name == "parse handle"
        assert not steps[0].ok

    def test_unknown_user_reports_status(self, remote_world):
        _, transport = remote_world
        steps = run_probe("ghost@remote.test", "probe.local", transport, test_mode=True)
        assert steps[-1].name == "WebFinger request"
        assert not steps[-1].ok
        assert "404" in steps[-1].detail

    def test_unreachable_host_reports_transport_error(self, remote_world):
        _, transport = remote_world
        steps = run_probe("bob@offline.test", "probe.local", transport, test_mode=True)
        assert steps[-1].name == "WebFinger request"
        assert not steps[-1].ok

    def _harvest_documents(self):
        node = InstanceNode(Config(domain="remote.test", test_mode=True, key_bits=1024))
        node.create_user("bob")
        webfinger_url = (
            "http://remote.test/.well-known/webfinger?resource="
            + quote("acct:bob@remote.test", safe="")
        )
        jrd = node.handle_http(
            HttpRequest("GET", webfinger_url, {"Accept": "application/jrd+json"})
        )
        actor = node.handle_http(
            HttpRequest(
                "GET",
                "http://remote.test/users/bob",
                {"Accept": "application/activity+json"},
            )
        )
        assert jrd.status == 200 and actor.status == 200
        return webfinger_url, jrd, actor

    def test_jrd_without_activity_self_link(self):
        webfinger_url, jrd, _ = self._harvest_documents()
        document = json.loads(jrd.body)
        document["links"] = [
            {"rel": "self", "type": "text/html", "href": "http://remote.test/@bob"}
        ]
        response = type(jrd)(200, dict(jrd.headers), json.dumps(document).encode())
        steps = run_probe(
            "bob@remote.test",
            "probe.local",
            DictTransport({webfinger_url: response}),
            test_mode=True,
        )
        assert steps[-1].name == "WebFinger parse"
        assert not steps[-1].ok
        assert "rel=self" in steps[-1].detail

    def test_invalid_actor_document_names_reason(self):
        webfinger_url, jrd, actor = self._harvest_documents()
        document = json.loads(actor.body)
        del document["inbox"]
        broken = type(actor)(200, dict(actor.headers), json.dumps(document).encode())
        steps = run_probe(
            "bob@remote.test",
            "probe.local",
            DictTransport(
                {webfinger_url: jrd, "http://remote.test/users/bob": broken}
            ),
            test_mode=True,
        )
        assert steps[-1].name == "actor validation"
        assert not steps[-1].ok

    def test_unparseable_public_key_fails_last_step(self):
        webfinger_url, jrd, actor = self._harvest_documents()
        document = json.loads(actor.body)
        document["publicKey"]["publicKeyPem"] = "not a pem"
        broken = type(actor)(200, dict(actor.headers), json.dumps(document).encode())
        steps = run_probe(
            "bob@remote.test",
            "probe.local",
            DictTransport(
                {webfinger_url: jrd, "http://remote.test/users/bob": broken}
            ),
            test_mode=True,
        )
        assert [step.ok for step in steps] == [True, True, True, True, True, False]
        assert steps[-1].name == "public key parse"

    def test_cmd_probe_exit_codes(self, remote_world, capsys):
        _, transport = remote_world
        config = Config(domain="probe.local", test_mode=True)
        assert cmd_probe(config, "bob@remote.test", transport=transport) == 0
        assert "[ok ]" in capsys.readouterr().out

        assert cmd_probe(config, "ghost@remote.test", transport=transport) == 1
        assert "[FAIL]" in capsys.readouterr().out


class TestMainCommands:
    def test_user_create_prints_token(self, capsys):
        assert main(["--domain", "cli.test", "user", "create", "alice"]) == 0
        out = capsys.readouterr().out
        assert "created alice" in out
        assert any(line.startswith("token:") for line in out.splitlines())

    def test_duplicate_username_exits_nonzero(self, tmp_path, capsys):
        base = ["--domain", "cli.test", "--store", f"file:{tmp_path / 'store'}"]
        assert main(base + ["user", "create", "alice"]) == 0
        assert main(base + ["user", "create", "alice"]) == 1
        assert "NameTaken" in capsys.readouterr().err

    def test_invalid_username_exits_nonzero(self, capsys):
        assert main(["--domain", "cli.test", "user", "create", "no spaces"]) == 1
        assert "InvalidName" in capsys.readouterr().err

    def test_keygen_rotates_stored_key(self, tmp_path, capsys):
        store_path = str(tmp_path / "store")
        base = ["--domain", "cli.test", "--store", f"file:{store_path}"]
        assert main(base + ["user", "create", "alice"]) == 0
        before = open_store("file", store_path).get_local_account("alice")
        assert main(base + ["keygen", "alice"]) == 0
        assert "rotated keypair" in capsys.readouterr().out
        after = open_store("file", store_path).get_local_account("alice")
        assert after.public_key_pem != before.public_key_pem

    def test_keygen_unknown_user(self, capsys):
        assert main(["--domain", "cli.test", "keygen", "ghost"]) == 1
        assert "no local account" in capsys.readouterr().err

    def test_bad_store_flag_exits_nonzero(self, capsys):
        code = main(["--domain", "x.test", "--store", "redis", "user", "create", "a"])
        assert code == 1
        assert "ConfigError" in capsys.readouterr().err

    def test_missing_command_is_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            main([])
        assert excinfo.value.code == 2

    def test_unknown_command_is_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["--domain", "x.test", "frobnicate"])
        assert excinfo.value.code == 2


def _wait_for(url: str, deadline_seconds: float = 15.0) -> None:
    deadline = time.time() + deadline_seconds
    while True:
        try:
            with urllib.request.urlopen(url, timeout=2) as response:
                response.read()
                return
        except (urllib.error.URLError, OSError):
            if time.time() > deadline:
                raise
            time.sleep(0.1)


class TestServe:
    def test_bind_failure_is_reported(self):
        with socket.socket() as blocker:
            blocker.bind(("127.0.0.1", 0))
            blocker.listen(1)
            port = blocker.getsockname()[1]
            config = Config(domain="busy.test", port=port)
            with pytest.raises(BindFailed):
                cmd_serve(config)

    def test_serve_end_to_end_over_real_sockets(self, tmp_path, capsys):
        port = _free_port()
        config = {
            "domain": "serve.test",
            "port": port,
            "bind": "127.0.0.1",
            "storage_backend": "file",
            "storage_path": str(tmp_path / "store"),
            "test_mode": True,
        }
        config_path = tmp_path / "server.json"
        config_path.write_text(json.dumps(config))

        assert main(["--config", str(config_path), "user", "create", "alice"]) == 0
        out = capsys.readouterr().out
        token = next(
            line for line in out.splitlines() if line.startswith("token:")
        ).split()[-1]

        process = subprocess.Popen(
            [
                sys.executable,
                "-c",
                "import sys; from mothfed.cli import main; sys.exit(main(sys.argv[1:]))",
                "--config",
                str(config_path),
                "serve",
            ],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            cwd=str(tmp_path),
        )
        base = f"http://127.0.0.1:{port}"
        try:
            webfinger_url = base + "/.well-known/webfinger?resource=" + quote(
                "acct:alice@serve.test", safe=""
            )
            _wait_for(webfinger_url)
            with urllib.request.urlopen(webfinger_url, timeout=5) as response:
                jrd = json.load(response)
            assert jrd["subject"] == "acct:alice@serve.test"

            actor_request = urllib.request.Request(
                f"{base}/users/alice",
                headers={"Accept": "application/activity+json"},
            )
            with urllib.request.urlopen(actor_request, timeout=5) as response:
                actor = json.load(response)
            assert actor["preferredUsername"] == "alice"
            assert actor["publicKey"]["publicKeyPem"].startswith("-----BEGIN")

            post_request = urllib.request.Request(
                f"{base}/api/v1/statuses",
                data=json.dumps(
                    {"status": "hello over a real socket #wire", "visibility": "public"}
                ).encode("utf-8"),
                headers={
                    "Authorization": f"Bearer {token}",
                    "Content-Type": "application/json",
                },
                method="POST",
            )
            with urllib.request.urlopen(post_request, timeout=5) as response:
                rendered = json.load(response)
            assert "hello over a real socket" in rendered["content"]

            with urllib.request.urlopen(
                f"{base}/api/v1/timelines/tag/wire", timeout=5
            ) as response:
                tagged = json.load(response)
            assert len(tagged) == 1

            with pytest.raises(urllib.error.HTTPError) as excinfo:
                urllib.request.urlopen(f"{base}/definitely/not/here", timeout=5)
            assert excinfo.value.code == 404

            process.send_signal(signal.SIGTERM)
            stdout, _ = process.communicate(timeout=15)
            assert process.returncode == 0
            assert "serving serve.test" in stdout
        finally:
            if process.poll() is None:
                process.kill()
                process.communicate()
