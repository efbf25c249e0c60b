"""YAML configuration with ``frontend``, ``augment``, ``policy`` and ``run`` sections.

Example::

    frontend:
      noise_reduction_enabled: false
    augment:
      preset: emotion
      rng_seed: 3
    policy:
      param_cache_budget_bytes: 4194304
      enforce_rank_rule: true
    run:
      db_floor: -70.0
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .compiler import OpSupportPolicy
from .datapipe import AugmentConfig
from .errors import ConfigError
from .frontend import FrontendConfig

SECTIONS = ("frontend", "augment", "policy", "run")


@dataclass
class Config:
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    augment: AugmentConfig | None = None
    policy: OpSupportPolicy = field(default_factory=OpSupportPolicy)
    run: dict = field(default_factory=dict)


def parse_config(data: dict | None) -> Config:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for s in SECTIONS:
        if data.get(s) is not None and not isinstance(data[s], dict):
            raise ConfigError(f"section {s!r} must be a mapping")
    try:
        policy = OpSupportPolicy.from_dict(data.get("policy") or {})
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad policy: {exc}") from exc
    try:
        frontend = FrontendConfig.from_dict(data.get("frontend") or {})
    except TypeError as exc:
        raise ConfigError(f"bad frontend config: {exc}") from exc
    augment = AugmentConfig.from_dict(data["augment"]) if data.get("augment") is not None else None
    return Config(frontend, augment, policy, dict(data.get("run") or {}))


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return parse_config(data)
