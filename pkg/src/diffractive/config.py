"""Experiment configuration schemas. JSON text, unknown keys rejected."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RankCase(_Strict):
    n_fov: int = Field(ge=1)
    layer_sizes: list[int] = Field(min_length=1)
    equal_distances: bool = False
    distance: float = Field(2.0, ge=1.0)   # used for equal distances
    distance_range: tuple[float, float] = (1.1, 2.5)

    @field_validator("distance_range")
    @classmethod
    def _range(cls, v):
        if not 1.0 <= v[0] < v[1]:
            raise ValueError("distance range must satisfy 1 <= low < high")
        return v

    @field_validator("layer_sizes")
    @classmethod
    def _positive(cls, v):
        if any(n < 1 for n in v):
            raise ValueError("layer sizes must be positive")
        return v


class RankConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    command: Literal["rank"] = "rank"
    seed: int = 0
    geometries: int = Field(3, ge=1)
    rtol: float = Field(1e-8, gt=0)
    min_gap: float = Field(1e3, gt=1)
    max_resample: int = Field(3, ge=0)
    cases: list[RankCase] = Field(min_length=1)


class BasisCase(_Strict):
    n_l1: int = Field(ge=1)
    n_l2: int = Field(ge=1)
    n_h: Optional[int] = Field(None, ge=1)   # h-vector length, default N_L1*N_L2 + 1


class BasisgenConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    command: Literal["basisgen"] = "basisgen"
    seed: int = 0
    orders: int = Field(100, ge=1)
    cases: list[BasisCase] = Field(min_length=1)


class DatasetConfig(_Strict):
    kind: Literal["spatial-code", "cifar10"] = "spatial-code"
    fov_cells: tuple[int, int] = (16, 16)
    classes: int = Field(9, ge=2)
    fraction: float = Field(0.03, gt=0, le=1)
    block: int = Field(2, ge=1)
    map_seed: int = 0
    train_count: int = Field(2000, ge=1)
    test_count: int = Field(1000, ge=1)
    cifar_classes: list[int] = [0, 1]
    cifar_path: Optional[str] = None

    @model_validator(mode="after")
    def _cifar(self):
        if self.kind == "cifar10":
            if len(self.cifar_classes) != self.classes:
                raise ValueError("cifar_classes must list one CIFAR label per class")
            if any(not 0 <= c <= 9 for c in self.cifar_classes):
                raise ValueError("CIFAR-10 labels lie in [0, 9]")
        return self


class NetworkConfig(_Strict):
    input_shape: tuple[int, int] = (32, 32)
    output_shape: tuple[int, int] = (32, 32)
    layer_shapes: list[tuple[int, int]] = Field(default_factory=lambda: [(32, 32)], min_length=1)
    distances: list[float] = Field(default_factory=lambda: [8.0, 8.0])
    pitch: float = Field(0.5, gt=0, le=0.5)
    mode: Literal["phase", "complex"] = "phase"
    form: Literal["dense", "convolution", "spectral"] = "dense"
    detectors: Literal["desk", "fig3", "cifar10"] = "desk"

    @model_validator(mode="after")
    def _distances(self):
        if len(self.distances) != len(self.layer_shapes) + 1:
            raise ValueError(f"{len(self.layer_shapes)} layers need "
                             f"{len(self.layer_shapes) + 1} distances")
        if any(d < 1.0 for d in self.distances):
            raise ValueError("distances below one wavelength are outside the model")
        return self


class TrainSection(_Strict):
    loss: Literal["cross-entropy", "mse"] = "cross-entropy"
    learning_rate: float = Field(0.001, ge=0)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_epsilon: float = Field(1e-8, gt=0)
    virtual_contrast_T: float = Field(10.0, gt=0)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(50, ge=0)


class TrainExperimentConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    command: Literal["train"] = "train"
    seed: int = 0
    dataset: DatasetConfig = DatasetConfig()
    network: NetworkConfig = NetworkConfig()
    train: TrainSection = TrainSection()


class DatasetExperimentConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    command: Literal["gen-dataset"] = "gen-dataset"
    seed: int = 0
    dataset: DatasetConfig = DatasetConfig()


class ReportConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    command: Literal["report"] = "report"
    inputs: list[str] = Field(min_length=1)


SCHEMAS = {
    "rank": RankConfig,
    "basisgen": BasisgenConfig,
    "train": TrainExperimentConfig,
    "eval": TrainExperimentConfig,
    "gen-dataset": DatasetExperimentConfig,
    "report": ReportConfig,
}


def bundled_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("diffractive.configs").iterdir()
                  if p.name.endswith(".json"))


def read_config_text(ref: str) -> tuple[str, str]:
    """Text and origin of a config given a path or a bundled config name."""
    p = Path(ref)
    if p.is_file():
        return p.read_text(), str(p)
    res = resources.files("diffractive.configs").joinpath(f"{ref}.json")
    if res.is_file():
        return res.read_text(), f"bundled:{ref}"
    raise ConfigError(f"no config file or bundled config named {ref!r} "
                      f"(bundled: {', '.join(bundled_names())})")


def _format_errors(origin: str, exc: ValidationError) -> str:
    lines = [f"{origin}: invalid configuration"]
    for e in exc.errors():
        key = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"  {key}: {e['msg']}")
    return "\n".join(lines)


def parse_config(command: str, data, origin: str = "<config>", seed: int | None = None):
    """Validate a config tree for ``command``; ``seed`` overrides the top-level seed."""
    schema = SCHEMAS[command]
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{origin}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{origin}: top level must be an object")
    data = dict(data)
    if "command" in data and data["command"] != schema.model_fields["command"].default:
        raise ConfigError(f"{origin}: config is for {data['command']!r}, not {command!r}")
    if seed is not None and "seed" in schema.model_fields:
        data["seed"] = seed
    try:
        return schema.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(origin, exc)) from exc


def load_config(command: str, ref: str, seed: int | None = None):
    text, origin = read_config_text(ref)
    return parse_config(command, text, origin, seed)


def echo(cfg: BaseModel) -> dict:
    """Fully resolved config tree, defaults filled in."""
    return cfg.model_dump(mode="json")
