"""Training configuration and its flat-JSON file format."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from ..inversion import GAUSS_SEIDEL, JACOBI, METHODS, InversionMethod
from ..netcore import (GAUSSIAN, LEAKY_RELU, ORTHOGONAL, RANDOM_INIT,
                       SMOOTH_LEAKY_RELU, SQUARED, TRANSPOSE_INIT, UNSQUARED,
                       ActivationKind)
from ..updates import DTP1, DTP_SCALED, STABILITY_OFF, STABILITY_UNIFORM

DTP_CONVEX = "dtp_convex"
SCALINGS = (DTP1, DTP_SCALED, DTP_CONVEX)
DATASETS = ("linear_map", "rotated_nonlinear", "csv")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    beta: float = 0.01
    decoder_lr: float = 0.1
    inversion: str = "output_iterative"
    stopping_precision: float = 1e-6
    max_sweeps: int = 100
    norm_convention: str = SQUARED
    scaling: str = DTP_SCALED
    stability_mode: str = STABILITY_OFF
    seed: int = 0
    epochs: int = 50
    dataset: str = "linear_map"
    width: int = 8
    n_samples: int = 64
    dataset_path: str | None = None
    # network and run knobs
    layers: int = 2
    activation: str = LEAKY_RELU
    slope: float = 0.1
    init_scheme: str = ORTHOGONAL
    decoder_init: str = TRANSPOSE_INIT
    bias: bool = False
    relaxation: str = JACOBI
    batch_size: int = 1
    decoder_power: float = 2.0
    influence_cap: float = 1e4
    failure_budget: int = 1000
    granularity: str = "sample"

    def __post_init__(self):
        positive = ("beta", "decoder_lr", "stopping_precision", "influence_cap")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("max_sweeps", "layers", "width", "n_samples", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0 or self.failure_budget < 0:
            raise ConfigError("epochs and failure_budget must be >= 0")
        choices = {
            "inversion": METHODS,
            "norm_convention": (SQUARED, UNSQUARED),
            "scaling": SCALINGS,
            "stability_mode": (STABILITY_OFF, STABILITY_UNIFORM),
            "dataset": DATASETS,
            "activation": (LEAKY_RELU, SMOOTH_LEAKY_RELU),
            "init_scheme": (ORTHOGONAL, GAUSSIAN),
            "decoder_init": (TRANSPOSE_INIT, RANDOM_INIT),
            "relaxation": (JACOBI, GAUSS_SEIDEL),
            "granularity": ("sample", "epoch"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, "
                                  f"got {getattr(self, name)!r}")
        if self.dataset == "csv" and not self.dataset_path:
            raise ConfigError("dataset 'csv' needs dataset_path")
        if not 0.0 < self.slope <= 1.0:
            raise ConfigError("slope must lie in (0, 1]")

    @property
    def method(self) -> InversionMethod:
        return InversionMethod(self.inversion, self.max_sweeps,
                               self.stopping_precision)

    @property
    def activation_kind(self) -> ActivationKind:
        return ActivationKind(self.activation, self.slope)

    def to_dict(self) -> dict:
        return asdict(self)


def config_from_dict(data: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return TrainConfig(**data)
    except TypeError as err:
        raise ConfigError(str(err)) from None


def load_config(path) -> TrainConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(data)
