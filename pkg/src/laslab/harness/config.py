"""Plain-text ``key = value`` configs with typed schemas and a reproducibility stamp."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigError


@dataclass(frozen=True)
class Key:
    default: object
    help: str = ""

    @property
    def kind(self) -> type:
        return type(self.default)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def coerce(name: str, key: Key, raw) -> object:
    if not isinstance(raw, str):
        return raw
    kind = key.kind
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot read {raw!r} as {kind.__name__}") from None
    return raw.strip()


def parse_config_text(text: str, schema: dict, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines (``#`` starts a comment)."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        if key not in schema:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}; valid keys: {', '.join(sorted(schema))}")
        out[key] = coerce(key, schema[key], value)
    return out


def resolve(schema: dict, config_file=None, overrides: dict | None = None) -> dict:
    """Defaults, then the config file, then explicit overrides."""
    values = {k: v.default for k, v in schema.items()}
    if config_file:
        path = Path(config_file)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text, schema, str(path)))
    for k, v in (overrides or {}).items():
        k = k.replace("-", "_")
        if k not in schema:
            raise ConfigError(f"unknown key {k!r}; valid keys: {', '.join(sorted(schema))}")
        values[k] = coerce(k, schema[k], v)
    return values


def config_hash(values: dict) -> str:
    canon = json.dumps(values, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def stamp(command: str, values: dict) -> dict:
    return {
        "command": command,
        "config": values,
        "config_hash": config_hash({"command": command, **values}),
        "seed": values.get("seed"),
    }


def write_stamp(path, command: str, values: dict) -> dict:
    from .formats import atomic_write_text

    record = stamp(command, values)
    atomic_write_text(path, json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")
    return record
