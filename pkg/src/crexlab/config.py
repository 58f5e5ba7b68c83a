"""Experiment configuration documents.

An experiment config is a JSON object with optional sections ``scenario``,
``train``, ``thresholds``, ``selection`` and ``metrics`` plus ``output_dir``
and ``version`` (must be 1). Unknown keys anywhere are rejected. The top-level
``selection`` replaces ``train.selection``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from pydantic import ConfigDict, TypeAdapter, ValidationError

from . import FORMAT_VERSION
from .detection import ThresholdConfig
from .errors import ConfigError
from .losses import LossConfig
from .selection import SelectionStrategy
from .synthworld import AttributeSpec, ClassSpec, ScenarioSpec
from .trainer import TrainConfig


@dataclass(frozen=True)
class MetricOptions:
    match_threshold: Optional[float] = None

    def __post_init__(self):
        if self.match_threshold is not None and not self.match_threshold > 0:
            raise ValueError("match_threshold must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    version: int = FORMAT_VERSION
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    selection: SelectionStrategy = field(default_factory=SelectionStrategy)
    metrics: MetricOptions = field(default_factory=MetricOptions)
    output_dir: str = "out"

    def __post_init__(self):
        if self.version != FORMAT_VERSION:
            raise ValueError(f"unsupported config version {self.version}")

    @property
    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, selection=self.selection)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))


for _cls in (
    AttributeSpec,
    ClassSpec,
    ScenarioSpec,
    LossConfig,
    SelectionStrategy,
    TrainConfig,
    ThresholdConfig,
    MetricOptions,
    ExperimentConfig,
):
    _cls.__pydantic_config__ = ConfigDict(extra="forbid")

_ADAPTER = TypeAdapter(ExperimentConfig)


def _location(err: dict) -> str:
    return ".".join(str(p) for p in err["loc"]) or "<root>"


def parse_config(doc) -> ExperimentConfig:
    try:
        return _ADAPTER.validate_python(doc)
    except ValidationError as exc:
        first = exc.errors()[0]
        msg = first["msg"]
        if len(exc.errors()) > 1:
            msg += f" (+{len(exc.errors()) - 1} more)"
        raise ConfigError(msg, _location(first)) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from exc
    try:
        return parse_config(doc)
    except ConfigError as exc:
        raise ConfigError(str(exc), str(path)) from exc
