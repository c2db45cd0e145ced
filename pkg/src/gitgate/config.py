"""Gateway configuration: a single TOML file."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict

try:
    import tomllib  # Python 3.11+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .cache import DEFAULT_HOT_BUDGET


class ConfigError(Exception):
    pass


@dataclass
class GatewayConfig:
    listen: str = "127.0.0.1:8470"
    admin_listen: str = "127.0.0.1:8471"
    cache_root: str = "gitgate-data/cache"
    ledger_path: str = "gitgate-data/ledger.jsonl"
    hot_tier_budget_bytes: int = DEFAULT_HOT_BUDGET
    break_glass_max_ttl_seconds: float = 3600.0
    hold_wait_max_seconds: float = 60.0
    upstream_timeout_seconds: float = 10.0
    admin_tokens: Dict[str, str] = field(default_factory=dict)  # operator -> token
    upstream_overrides: Dict[str, str] = field(default_factory=dict)  # host -> base URL

    def operator_for_token(self, token: str) -> str | None:
        for operator, value in self.admin_tokens.items():
            if value == token:
                return operator
        return None

    def first_token(self) -> str | None:
        for value in self.admin_tokens.values():
            return value
        return None


def _split_listen(value: str) -> tuple:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"listen address {value!r} must look like host:port")
    return host, int(port)


def load_config(path: str) -> GatewayConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file {path!r} does not exist")
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc

    cfg = GatewayConfig()
    simple_fields = {
        "listen": str,
        "admin_listen": str,
        "cache_root": str,
        "ledger_path": str,
        "hot_tier_budget_bytes": int,
        "break_glass_max_ttl_seconds": (int, float),
        "hold_wait_max_seconds": (int, float),
        "upstream_timeout_seconds": (int, float),
    }
    for key, expected in simple_fields.items():
        if key in data:
            value = data.pop(key)
            if not isinstance(value, expected) or isinstance(value, bool):
                raise ConfigError(f"config key {key!r} has the wrong type")
            setattr(cfg, key, value)
    for table in ("admin_tokens", "upstream_overrides"):
        if table in data:
            value = data.pop(table)
            if not isinstance(value, dict) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in value.items()
            ):
                raise ConfigError(f"config table {table!r} must map strings to strings")
            setattr(cfg, table, value)
    if data:
        raise ConfigError(f"unknown config keys: {sorted(data)}")

    _split_listen(cfg.listen)
    _split_listen(cfg.admin_listen)
    # paths are resolved relative to the config file's directory
    base = os.path.dirname(os.path.abspath(path))
    cfg.cache_root = os.path.join(base, cfg.cache_root)
    cfg.ledger_path = os.path.join(base, cfg.ledger_path)
    return cfg
