"""Strict JSON experiment configuration."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .activations import ActivationKind
from .nn.optim import optimizer_from_dict

Experiment = Literal["gradcheck", "bench", "landscape", "train", "sweep-depth", "sweep-noise", "sweep-init", "stats"]


class ConfigError(ValueError):
    """Configuration is malformed or inconsistent."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class IdxData(_Strict):
    kind: Literal["idx"]
    dir: Optional[str] = None
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None

    @model_validator(mode="after")
    def _paths(self):
        explicit = (self.train_images, self.train_labels, self.test_images, self.test_labels)
        if self.dir is None and not all(explicit):
            raise ValueError("idx data needs either 'dir' or all four file paths")
        return self

    def paths(self) -> list[str]:
        return [p for p in (self.dir, self.train_images, self.train_labels, self.test_images, self.test_labels) if p]


class CifarData(_Strict):
    kind: Literal["cifar10"]
    dir: str

    def paths(self) -> list[str]:
        return [self.dir]


class DigitsData(_Strict):
    """scikit-learn's bundled 8x8 digits; needs no files."""

    kind: Literal["digits"]
    test_fraction: float = 0.25
    split_seed: int = 0

    def paths(self) -> list[str]:
        return []


DataConfig = Union[IdxData, CifarData, DigitsData]


class Optimizer(_Strict):
    type: Literal["sgd", "rmsprop", "adam"]
    lr: float = Field(gt=0)
    momentum: Optional[float] = None
    rho: Optional[float] = None
    beta1: Optional[float] = None
    beta2: Optional[float] = None
    eps: Optional[float] = None

    def build(self):
        return optimizer_from_dict(self.model_dump(exclude_none=True))


class ExperimentConfig(_Strict):
    experiment: Experiment
    seeds: list[int] = Field(min_length=1)
    activations: Optional[list[str]] = None
    data: Optional[DataConfig] = Field(default=None, discriminator="kind")
    output_dir: str = "outputs"
    workers: int = Field(default=1, ge=1)
    paper_scale: bool = False

    # training
    model: Optional[Literal["mlp", "cnn5", "cnn6"]] = None
    epochs: Optional[int] = Field(default=None, ge=1)
    batch_size: int = Field(default=128, ge=1)
    optimizer: Optional[Optimizer] = None
    width: Optional[int] = Field(default=None, ge=1)
    channels: Optional[list[int]] = None
    hidden: Optional[int] = Field(default=None, ge=1)
    dtype: Literal["float32", "float64"] = "float32"

    # sweeps
    depths: list[int] = [5, 10, 15, 20, 25]
    sigmas: list[float] = [0.0, 0.25, 0.5, 0.75, 1.0]
    initializers: list[Literal["glorot_uniform", "lecun_normal", "he_uniform"]] = [
        "glorot_uniform", "lecun_normal", "he_uniform"]
    n_runs: Optional[int] = Field(default=None, ge=2)

    # bench
    buffer_len: int = Field(default=2**20, ge=1)
    n_total: int = Field(default=100, ge=10)
    warmup: int = Field(default=10, ge=0)

    # landscape
    resolution: int = Field(default=256, ge=2)
    x_range: tuple[float, float] = (-10.0, 10.0)
    y_range: tuple[float, float] = (-10.0, 10.0)
    landscape_depth: int = Field(default=5, ge=2)
    landscape_width: int = Field(default=64, ge=1)
    export_seeds: Optional[list[int]] = None
    loss_slice: bool = False
    checkpoint: Optional[str] = None
    slice_resolution: int = Field(default=33, ge=2)
    slice_range: tuple[float, float] = (-1.0, 1.0)
    eval_samples: int = Field(default=2048, ge=1)

    @field_validator("activations")
    @classmethod
    def _activations(cls, v):
        if v is not None:
            if not v:
                raise ValueError("activations must not be empty")
            for name in v:
                ActivationKind.parse(name)
        return v

    @field_validator("channels")
    @classmethod
    def _channels(cls, v):
        if v is not None and (len(v) != 3 or min(v) < 1):
            raise ValueError("channels must list three positive widths")
        return v

    @model_validator(mode="after")
    def _consistency(self):
        if self.loss_slice and not self.checkpoint:
            raise ValueError("loss_slice needs a 'checkpoint' path")
        needs_data = {"train", "sweep-depth", "sweep-noise", "sweep-init", "stats"}
        if self.experiment in needs_data and self.data is None:
            raise ValueError(f"experiment {self.experiment!r} needs a 'data' block")
        if self.loss_slice and self.data is None:
            raise ValueError("loss_slice needs a 'data' block for its evaluation set")
        return self

    def activation_kinds(self, default: list[str]) -> list[ActivationKind]:
        return [ActivationKind.parse(a) for a in (self.activations or default)]


def parse_config(raw: dict, *, paper_scale: bool = False, seed_offset: int = 0,
                 output_dir: str | None = None) -> ExperimentConfig:
    """Validate ``raw`` and apply command-line overrides."""
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None
    updates: dict = {}
    if seed_offset:
        updates["seeds"] = [s + seed_offset for s in cfg.seeds]
    if output_dir is not None:
        updates["output_dir"] = output_dir
    if paper_scale:
        updates.update(epochs=50, width=500, n_runs=23, paper_scale=True)
    return cfg.model_copy(update=updates) if updates else cfg


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(raw, **overrides)


def _describe(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "invalid config:\n  " + "\n  ".join(lines)
