"""Shared JSON pipeline configuration with full default materialization.

Every under-specified constant in the pipeline lives here with its default,
so the effective configuration echoed by each CLI stage is a complete,
auditable record of the run.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .losses import LossConfig
from .model import ModelConfig
from .postprocess import ENHANCING_THRESHOLD, MIN_TUMOR_VOXELS
from .preprocess import SamplingPolicy
from .survival import LONG_DAYS, SHORT_DAYS, ForestConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathsConfig:
    cases_dir: str = "cases"
    output_dir: str = "out"
    checkpoint: str = "out/model.ckpt"
    survival_csv: str = "cases/survival.csv"


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    learning_rate: float = 1e-4


@dataclass(frozen=True)
class InferenceConfig:
    window: int | None = None   # None -> model patch size
    stride: int | None = None   # None -> window // 2


@dataclass(frozen=True)
class PostprocessConfig:
    min_tumor_voxels: int = MIN_TUMOR_VOXELS
    enhancing_threshold: int = ENHANCING_THRESHOLD
    connectivity: int = 26


@dataclass(frozen=True)
class SurvivalRunConfig:
    short_days: float = SHORT_DAYS
    long_days: float = LONG_DAYS
    folds: int = 5
    gtr_only: bool = True


def desk_model_config(seed: int = 0) -> ModelConfig:
    """CI-scale network: same architecture, laptop-sized widths."""
    return ModelConfig(widths=(8, 16, 32), bottleneck_width=64,
                       patch_size=16, seed=seed)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    model: ModelConfig = field(default_factory=desk_model_config)
    loss: LossConfig = field(default_factory=LossConfig)
    sampling: SamplingPolicy = field(default_factory=SamplingPolicy)
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    survival: SurvivalRunConfig = field(default_factory=SurvivalRunConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_SECTIONS = {
    "paths": PathsConfig,
    "model": ModelConfig,
    "loss": LossConfig,
    "sampling": SamplingPolicy,
    "train": TrainConfig,
    "inference": InferenceConfig,
    "postprocess": PostprocessConfig,
    "forest": ForestConfig,
    "survival": SurvivalRunConfig,
}


def _build_section(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    if cls is ModelConfig and "widths" in data:
        data = dict(data, widths=tuple(data["widths"]))
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    kwargs = {}
    if "seed" in data:
        if not isinstance(data["seed"], int):
            raise ConfigError("seed must be an integer")
        kwargs["seed"] = data["seed"]
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _build_section(cls, data[name], name)
    return PipelineConfig(**kwargs)


def load_config(path) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(cfg.to_json() + "\n")
