"""Flat ``key = value`` run-config files.

Every key mirrors a TrainConfig field, so the dataclass stays the single
source of truth for names, defaults, and types. Unknown keys are rejected
rather than ignored — a typo must not silently train the wrong model.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .errors import ConfigurationError
from .training import TrainConfig

__all__ = ["documented_keys", "load_train_config", "parse_config_text"]

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def documented_keys() -> dict[str, str]:
    """Key -> default (as config-file text) for every supported key."""
    out = {}
    for f in fields(TrainConfig):
        default = f.default
        out[f.name] = str(default).lower() if isinstance(default, bool) else str(default)
    return out


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key/value pairs from flat config text; # starts a comment."""
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigurationError(f"line {lineno}: empty key or value in {raw.strip()!r}")
        if key in pairs:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def _coerce(name: str, kind: type, raw: str):
    if kind is bool:
        lowered = raw.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ConfigurationError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigurationError(f"{name}: expected {kind.__name__}, got {raw!r}") from None


def load_train_config(path=None, overrides: dict[str, str] | None = None) -> TrainConfig:
    """Build a validated TrainConfig from a file plus flag overrides."""
    pairs = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file not found: {p}")
        pairs.update(parse_config_text(p.read_text()))
    pairs.update(overrides or {})

    types = {f.name: type(f.default) for f in fields(TrainConfig)}
    values = {}
    for key, raw in pairs.items():
        if key not in types:
            raise ConfigurationError(f"unknown config key {key!r}")
        values[key] = _coerce(key, types[key], raw)
    cfg = TrainConfig(**values)
    cfg.validate()
    return cfg
