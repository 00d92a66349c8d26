"""Run configuration: nested dataclasses exposed as flat dotted keys.

A config file is a JSON object whose keys are the dotted names listed by
:func:`config_keys`, e.g. ``{"epochs": 30, "model.backbone.fpn_width": 32}``.
Unknown keys are an error. Command-line overrides use the same names
(``key=value``, value parsed as JSON, falling back to a bare string).
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..losses import LossWeights
from ..model import ModelConfig
from .data import AugmentConfig


@dataclass
class DataConfig:
    train_dir: str = ""
    test_dir: str = ""


@dataclass
class OptimConfig:
    lr: float = 0.0005
    weight_decay: float = 0.0005
    momentum: float = 0.9


@dataclass
class EvalConfig:
    k: int = 5
    threshold: float | None = None
    head_order: str = "confidence"  # or "fixed"


@dataclass
class RunConfig:
    seed: int = 0
    precision: int = 32
    epochs: int = 50
    batch_size: int = 8
    eval_every: int = 1
    out_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_flat(self) -> dict[str, Any]:
        return flatten(self)

    @classmethod
    def from_flat(cls, values: dict[str, Any]) -> "RunConfig":
        cfg = cls()
        for key, value in values.items():
            set_key(cfg, key, value)
        return rebuild(cfg)


def flatten(obj, prefix: str = "") -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            out.update(flatten(value, f"{prefix}{f.name}."))
        else:
            out[f"{prefix}{f.name}"] = value
    return out


def config_keys() -> list[str]:
    return list(flatten(RunConfig()))


def set_key(cfg: RunConfig, key: str, value: Any) -> None:
    parts = key.split(".")
    target = cfg
    for p in parts[:-1]:
        if not dataclasses.is_dataclass(target) or p not in {f.name for f in dataclasses.fields(target)}:
            raise KeyError(f"unknown config key {key!r}")
        target = getattr(target, p)
    leaf = parts[-1]
    names = {f.name: f for f in dataclasses.fields(target)} if dataclasses.is_dataclass(target) else {}
    if leaf not in names or dataclasses.is_dataclass(getattr(target, leaf)):
        raise KeyError(f"unknown config key {key!r}")
    setattr(target, leaf, value)


def rebuild(obj):
    """Re-run ``__post_init__`` validation bottom-up after raw assignment."""
    kwargs = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        kwargs[f.name] = rebuild(value) if dataclasses.is_dataclass(value) else value
    return type(obj)(**kwargs)


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ValueError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(path: str | Path | None, overrides: list[str] = ()) -> RunConfig:
    values: dict[str, Any] = {}
    if path is not None:
        values = json.loads(Path(path).read_text())
        if not isinstance(values, dict):
            raise ValueError(f"config {path} must hold a JSON object")
    for text in overrides:
        key, value = parse_override(text)
        values[key] = value
    return RunConfig.from_flat(values)
