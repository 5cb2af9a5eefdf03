"""Server configuration: flat JSON file, environment overrides, validation.

Precedence: environment variables (MOTH_DOMAIN, MOTH_PORT, MOTH_STORE)
beat the config file, which beats built-in defaults.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from typing import Any, Mapping

from .errors import ConfigError

ENV_DOMAIN = "MOTH_DOMAIN"
ENV_PORT = "MOTH_PORT"
ENV_STORE = "MOTH_STORE"


@dataclass
class Config:
    domain: str
    port: int = 8420
    bind: str = "127.0.0.1"
    storage_backend: str = "memory"
    storage_path: str | None = None
    skew_seconds: float = 300.0
    max_attempts: int = 8
    retry_base_seconds: float = 10.0
    resolve_ttl_seconds: float = 3600.0
    test_mode: bool = False
    key_bits: int = 2048

    @property
    def base_url(self) -> str:
        scheme = "http" if self.test_mode else "https"
        return f"{scheme}://{self.domain}"

    def validate(self) -> "Config":
        if not self.domain or not isinstance(self.domain, str):
            raise ConfigError("domain must be a non-empty hostname")
        if "/" in self.domain or " " in self.domain:
            raise ConfigError(f"domain {self.domain!r} is not a bare hostname")
        if not isinstance(self.port, int) or not 1 <= self.port <= 65535:
            raise ConfigError(f"port {self.port!r} out of range")
        if self.storage_backend not in ("memory", "file"):
            raise ConfigError(f"unknown storage backend {self.storage_backend!r}")
        if self.storage_backend == "file" and not self.storage_path:
            raise ConfigError("file storage backend needs a storage_path")
        for name in ("skew_seconds", "retry_base_seconds", "resolve_ttl_seconds"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be at least 1")
        if self.key_bits < 512:
            raise ConfigError("key_bits too small for RSA")
        return self

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if "domain" not in data:
            raise ConfigError("config has no domain")
        return cls(**dict(data)).validate()


def _parse_store(value: str) -> tuple[str, str | None]:
    """MOTH_STORE syntax: "memory" or "file:<path>"."""
    if value == "memory":
        return "memory", None
    if value.startswith("file:"):
        path = value[len("file:"):]
        if not path:
            raise ConfigError("MOTH_STORE file backend needs a path (file:<path>)")
        return "file", path
    raise ConfigError(f"MOTH_STORE must be 'memory' or 'file:<path>', got {value!r}")


def load_config(
    path: str | None = None,
    env: Mapping[str, str] | None = None,
    defaults: Mapping[str, Any] | None = None,
) -> Config:
    env = os.environ if env is None else env
    merged: dict[str, Any] = dict(defaults or {})

    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                file_data = json.load(handle)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except ValueError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(file_data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        merged.update(file_data)

    if ENV_DOMAIN in env:
        merged["domain"] = env[ENV_DOMAIN]
    if ENV_PORT in env:
        try:
            merged["port"] = int(env[ENV_PORT])
        except ValueError as exc:
            raise ConfigError(f"{ENV_PORT} must be an integer") from exc
    if ENV_STORE in env:
        backend, store_path = _parse_store(env[ENV_STORE])
        merged["storage_backend"] = backend
        merged["storage_path"] = store_path

    return Config.from_dict(merged)
