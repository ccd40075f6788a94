"""Layered run configuration: defaults < config file < command-line flags."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .train import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DATA_DEFAULTS = {
    "n_train": 2000,
    "n_test": 1000,
    "novel_fraction": 0.1,
    "novel_class": 0,
    "classes": list(range(10)),
    "train_colors": [[1.0, 1.0, 1.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    "unseen_colors": [[0.0, 1.0, 0.0]],
    "color_names": ["white", "yellow", "blue", "green"],
    "stratified": True,
}
SCORE_DEFAULTS = {"bandwidth": "median"}


def defaults() -> dict:
    return {**TrainConfig().to_dict(), **DATA_DEFAULTS, **SCORE_DEFAULTS}


class ConfigError(ValueError):
    """Invalid or unknown configuration key; the message names the key."""


@dataclass
class ResolvedConfig:
    values: dict
    provenance: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.values, sort_keys=True).encode()).hexdigest()[:16]

    def train_config(self, **override) -> TrainConfig:
        keys = TrainConfig.field_names()
        try:
            return TrainConfig(**{k: v for k, v in {**self.values, **override}.items() if k in keys})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {"values": self.values, "provenance": self.provenance, "hash": self.hash()}


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        data = tomllib.loads(text)
    else:
        data = json.loads(text)
    # allow [train]/[data]/[score] sections as well as a flat table
    flat = {}
    for k, v in data.items():
        if isinstance(v, dict):
            flat.update(v)
        else:
            flat[k] = v
    return flat


def _check_color(key, c):
    if not isinstance(c, (list, tuple)) or len(c) != 3:
        raise ConfigError(f"{key}: colour {c!r} must be an RGB triple")
    for v in c:
        if not isinstance(v, (int, float)) or not 0.0 <= float(v) <= 1.0:
            raise ConfigError(f"{key}: colour component {v!r} outside [0, 1]")


def _coerce(key, value, reference):
    if key in ("train_colors", "unseen_colors"):
        for c in value:
            _check_color(key, c)
        return [[float(v) for v in c] for c in value]
    if key == "bandwidth":
        if isinstance(value, str) and value not in ("median", "median_heuristic", "scott"):
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(f"bandwidth: {value!r} is not 'median', 'scott' or a number") from None
        if not isinstance(value, str) and not float(value) > 0:
            raise ConfigError("bandwidth: fixed bandwidth must be positive")
        return value
    if isinstance(reference, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(reference, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(reference, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(reference, list) and not isinstance(value, list):
        raise ConfigError(f"{key}: expected a list, got {value!r}")
    return value


def resolve(config_file=None, overrides: dict | None = None) -> ResolvedConfig:
    """Merge defaults, an optional TOML/JSON file and flag overrides.

    ``None`` overrides are ignored; unknown keys raise :class:`ConfigError`.
    """
    base = defaults()
    values, provenance = dict(base), {k: "default" for k in base}
    layers = []
    if config_file is not None:
        layers.append((load_config_file(config_file), f"file:{config_file}"))
    layers.append(({k: v for k, v in (overrides or {}).items() if v is not None}, "flag"))
    for layer, source in layers:
        for k, v in layer.items():
            if k not in base:
                raise ConfigError(f"unknown config key {k!r}")
            values[k] = _coerce(k, v, base[k])
            provenance[k] = source
    resolved = ResolvedConfig(values, provenance)
    resolved.train_config()  # validate
    return resolved
