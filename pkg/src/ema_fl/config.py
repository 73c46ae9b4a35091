"""TOML run configuration: loading, ``--set`` overrides and canonical hashing.

A configuration file looks like::

    seed = 0
    n_clients = 50
    rounds = 100

    [dataset]
    separation = 5.0

    [attack]
    kind = "sign_flip"
    fraction = 0.2

    [rule]
    name = "ema"

Every key is optional.  Unknown sections or keys are rejected so that typos
fail loudly instead of silently running the defaults.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import fields
from enum import Enum
from pathlib import Path

from .aggregators import AggregationRuleConfig
from .errors import ConfigError
from .sim.attacks import AttackSpec
from .sim.data import DatasetSpec, PartitionSpec
from .sim.models import ModelSpec
from .sim.simulation import SimConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

TOP_LEVEL = ("seed", "n_clients", "rounds", "learning_rate", "batch_size", "auth_token")
SECTIONS = {
    "dataset": DatasetSpec,
    "partition": PartitionSpec,
    "attack": AttackSpec,
    "rule": AggregationRuleConfig,
    "model": ModelSpec,
}
# Friendlier spellings accepted in files and overrides.
KEY_ALIASES = {"rule": {"name": "rule", "f": "byzantine_count_f"}}
MODEL_DERIVED = ("input_dim", "n_classes")


def _field_names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def parse_value(text: str):
    """Read an override value as a TOML literal, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``path=value`` strings such as ``attack.fraction=0.2`` to a raw config dict."""
    merged = json.loads(json.dumps(raw))
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r} is not of the form key=value")
        parts = key.strip().split(".")
        if len(parts) > 2:
            raise ConfigError(f"override key {key!r} nests too deeply")
        node = merged
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{part!r} is not a section")
        node[parts[-1]] = parse_value(value.strip())
    return merged


def build_config(raw: dict) -> SimConfig:
    unknown = set(raw) - set(TOP_LEVEL) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key in TOP_LEVEL:
        if key in raw:
            value = raw[key]
            kwargs[key] = value.encode() if key == "auth_token" else value
    for name, cls in SECTIONS.items():
        section = raw.get(name)
        if section is None:
            continue
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be a table")
        aliases = KEY_ALIASES.get(name, {})
        section = {aliases.get(k, k): v for k, v in section.items()}
        allowed = _field_names(cls) - (set(MODEL_DERIVED) if name == "model" else set())
        bad = set(section) - allowed
        if bad:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
        try:
            kwargs[name] = cls(**section)
        except TypeError as exc:
            raise ConfigError(f"[{name}]: {exc}") from None
    try:
        return SimConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides=()) -> SimConfig:
    """Parse a TOML file, apply overrides and validate into a ``SimConfig``."""
    try:
        raw = tomllib.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return build_config(apply_overrides(raw, overrides))


def _plain(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, bytes):
        return value.decode()
    if isinstance(value, float):
        return float(repr(value))
    if hasattr(value, "__dataclass_fields__"):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    return value


def config_to_dict(config: SimConfig) -> dict:
    """Fully expanded config, defaults included, with enums as their names."""
    return _plain(config)


def canonical_json(config: SimConfig) -> str:
    return json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))


def config_hash(config: SimConfig) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()
