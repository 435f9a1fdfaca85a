"""Run configuration: JSON in, validated dataclasses out, unknown keys rejected."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig, config_from_dict, config_to_dict


@dataclass
class TrainConfig:
    lr: float = 1e-5              # halves every `halve_every` steps
    steps: int = 100
    batch_groups: int = 2
    halve_every: int = 2000
    seed: int = 0
    freeze_classifier: bool = False
    checkpoint_interval: int = 0  # 0 = final checkpoint only
    flip: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("train.steps must be >= 1")
        if self.batch_groups < 1:
            raise ConfigError("train.batch_groups must be >= 1")
        if self.halve_every < 1:
            raise ConfigError("train.halve_every must be >= 1")


@dataclass
class DataConfig:
    dataset: str = ""
    val_fraction: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("data.val_fraction must lie in [0, 1)")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self) -> dict:
        return config_to_dict(self)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return config_from_dict(RunConfig, doc)
