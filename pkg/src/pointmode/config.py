"""Run configuration: one JSON tree covering data, model, pretraining and fine-tuning.

Every field has a default; unknown keys anywhere in the tree are rejected.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .downstream import EVAL_SEED, ClassifyConfig
from .model import ObjectExpertConfig, SceneExpertConfig
from .pretrain import PretrainConfig
from .scenegen import SceneSpec


class ConfigError(ValueError):
    pass


@dataclass
class ShapeSetConfig:
    n_train: int = 200
    n_test: int = 100
    n_points: int = 256
    jitter: float = 0.01


@dataclass
class DataConfig:
    scene: SceneSpec = field(default_factory=SceneSpec)
    n_train: int = 16
    n_test: int = 16
    # train scenes use seeds [seed_start, seed_start + n_train), test scenes follow
    seed_start: int = 0
    shapes: ShapeSetConfig = field(default_factory=ShapeSetConfig)


@dataclass
class ModelConfig:
    object: ObjectExpertConfig = field(default_factory=ObjectExpertConfig)
    scene: SceneExpertConfig = field(default_factory=SceneExpertConfig)


@dataclass
class RunConfig:
    seed: int = 0
    precision: str = "f64"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: ClassifyConfig = field(default_factory=ClassifyConfig)
    eval_seed: int = EVAL_SEED

    def __post_init__(self):
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be 'f32' or 'f64', got {self.precision!r}")

    @property
    def dtype(self) -> str:
        return "float32" if self.precision == "f32" else "float64"

    def to_dict(self) -> dict:
        return to_dict(self)


def to_dict(obj) -> dict:
    """Plain JSON-ready tree (tuples become lists)."""
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        return v
    return conv(obj)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s) at {path or 'top level'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        sub = f"{path}.{name}" if path else name
        kwargs[name] = _build(hint, value, sub) if dataclasses.is_dataclass(hint) else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)
