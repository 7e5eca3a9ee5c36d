"""Run configuration: one YAML/JSON document, unknown keys rejected, flags override."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from shepherd.errors import ConfigError
from shepherd.rewards import RewardConfig


@dataclass
class DatasetConfig:
    history: int = 5
    obs_cap_bytes: int = 2000
    val_fraction: float = 0.1
    seed: int = 7


@dataclass
class EnvConfig:
    budget: int = 30
    action_timeout_s: float = 60.0
    obs_cap_bytes: int = 65536
    test_command: str = "python3 -m pytest -rA {tests}"


@dataclass
class PolicyConfig:
    base_url: str = "https://api.openai.com/v1"
    model_name: str = "gpt-4o-mini"
    temperature: float = 0.8
    k: int = 4
    price_per_mtok_prompt: float = 0.0
    price_per_mtok_completion: float = 0.0
    timeout_s: float = 120.0
    retries: int = 3


@dataclass
class ScorerConfig:
    kind: str = "feature"
    model_path: str = ""
    url: str = ""
    timeout_s: float = 30.0
    retries: int = 3

    def __post_init__(self) -> None:
        if self.kind not in ("feature", "remote"):
            raise ConfigError("scorer.kind", f"must be 'feature' or 'remote', got {self.kind!r}")


@dataclass
class TrainConfig:
    epochs: int = 5000
    learning_rate: float = 0.05
    l2: float = 0.0
    seed: int = 0


@dataclass
class Config:
    reward: RewardConfig = field(default_factory=RewardConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    parallelism: int = 1


def _coerce(value: Any, default: Any, key: str) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected bool, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected int, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(key, f"expected string, got {value!r}")
        return value
    return value


def _build(cls: type, data: Mapping[str, Any], prefix: str) -> Any:
    if not isinstance(data, Mapping):
        raise ConfigError(prefix or "<root>", "expected a mapping")
    defaults = cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in known:
            raise ConfigError(path, "unknown key")
        current = getattr(defaults, key)
        if dataclasses.is_dataclass(current):
            kwargs[key] = _build(type(current), value, path)
        else:
            kwargs[key] = _coerce(value, current, path)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix or "<root>", str(exc)) from None


def config_from_dict(data: Mapping[str, Any] | None) -> Config:
    return _build(Config, data or {}, "")


def config_to_dict(config: Config) -> dict[str, Any]:
    return dataclasses.asdict(config)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    p = Path(path)
    if not p.is_file():
        raise ConfigError("--config", f"no such file: {p}")
    try:
        data = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError("--config", f"cannot parse {p}: {exc}") from None
    return config_from_dict(data)


def dump_config(config: Config) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=True)


def apply_overrides(config: Config, overrides: Mapping[str, Any]) -> Config:
    """Return a copy with dotted-path overrides applied (``None`` values are skipped)."""
    data = config_to_dict(config)
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(dotted, "unknown key")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(dotted, "unknown key")
        node[parts[-1]] = value
    return config_from_dict(data)
