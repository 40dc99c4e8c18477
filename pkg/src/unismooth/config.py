"""Declarative experiment configuration (YAML), validated before any work."""

from __future__ import annotations

import re
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import (BaseModel, ConfigDict, Field, NonNegativeFloat, NonNegativeInt,
                      PositiveFloat, PositiveInt, ValidationError, model_validator)

__all__ = ["ExperimentConfig", "ConfigError", "load_config", "parse_config"]


class ConfigError(ValueError):
    pass


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 only treats "1.0e9" as a float; accept "1e9" and "1e-3" too
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                   |[-+]?[0-9][0-9_]*[eE][-+]?[0-9]+
                   |\.[0-9_]+(?:[eE][-+][0-9]+)?
                   |[-+]?\.(?:inf|Inf|INF)
                   |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)


class ModelBlock(_Block):
    floors: PositiveInt = 8
    mass: Union[PositiveFloat, list[PositiveFloat]] = 625e3
    stiffness: Union[PositiveFloat, list[PositiveFloat]] = 1e9
    rayleigh_alpha: NonNegativeFloat = 0.01
    rayleigh_beta: NonNegativeFloat = 0.01
    input_floors: list[PositiveInt] = Field(default_factory=lambda: [2], min_length=1)
    ground_motion: bool = False


class ExcitationBlock(_Block):
    kind: Literal["sinusoid", "synthetic-ground-motion", "sampled-series"]
    dt: PositiveFloat = 0.01
    duration: Optional[PositiveFloat] = None
    # sinusoid: one entry per input (scalars broadcast)
    amplitude: Union[float, list[float]] = 5e3
    frequency: Union[float, list[float]] = 8.0   # rad/s
    phase: Union[float, list[float]] = 0.0
    # synthetic ground motion
    record_seed: int = 1999
    peak: PositiveFloat = 3.0
    band: list[PositiveFloat] = Field(default_factory=lambda: [0.2, 8.0],
                                     min_length=2, max_length=2)  # Hz
    # sampled series
    path: Optional[str] = None

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind == "sampled-series" and not self.path:
            raise ValueError("sampled-series excitation needs 'path'")
        if self.kind != "sampled-series" and self.duration is None:
            raise ValueError(f"{self.kind} excitation needs 'duration'")
        if self.band[0] >= self.band[1]:
            raise ValueError("band must be (low, high) with low < high")
        return self


class SensorEntry(_Block):
    quantity: Literal["displacement", "velocity", "acceleration", "disp", "vel", "acc"]
    floor: PositiveInt


class NoiseBlock(_Block):
    level: NonNegativeFloat = 0.01
    seed: int = 0


class ReductionBlock(_Block):
    truth_modes: Optional[PositiveInt] = None
    estimator_modes: Optional[PositiveInt] = None


class PinvBlock(_Block):
    enabled: bool = False
    tolerance: float = Field(1e-10, gt=0.0, lt=1.0)


class EstimatorBlock(_Block):
    method: Literal["us", "akf"]
    label: Optional[str] = None
    window: NonNegativeInt = 0
    qx: NonNegativeFloat = 0.0
    qp: NonNegativeFloat = 0.0
    pinv: PinvBlock = Field(default_factory=PinvBlock)

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        return f"us_N{self.window}" if self.method == "us" else "akf"


class TuneParam(_Block):
    name: Literal["qx", "qp", "pinv_tolerance"]
    lo: float
    hi: float
    step: PositiveFloat = 0.1

    @model_validator(mode="after")
    def _order(self):
        if self.lo >= self.hi:
            raise ValueError(f"tuning range for {self.name}: lo must be below hi")
        return self


class TuningBlock(_Block):
    method: Literal["us", "akf"]
    window: NonNegativeInt = 0
    params: list[TuneParam] = Field(min_length=1, max_length=2)
    fixed: dict[str, NonNegativeFloat] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _valid_names(self):
        allowed = {"us": {"qx", "pinv_tolerance"}, "akf": {"qx", "qp"}}[self.method]
        names = [p.name for p in self.params] + list(self.fixed)
        bad = [n for n in names if n not in allowed]
        if bad:
            raise ValueError(f"parameters {bad} do not apply to method {self.method}")
        if len(set(names)) != len(names):
            raise ValueError("a parameter is both tuned and fixed, or listed twice")
        return self


class SweepBlock(_Block):
    windows: list[NonNegativeInt] = Field(min_length=1)
    qx: NonNegativeFloat = 0.0
    pinv_tolerance: Optional[float] = Field(None, gt=0.0, lt=1.0)


class OutputBlock(_Block):
    dir: str = "results"
    format: Literal["csv", "json"] = "csv"


class ExperimentConfig(_Block):
    name: str
    model: ModelBlock = Field(default_factory=ModelBlock)
    excitation: ExcitationBlock
    sensors: Union[str, list[SensorEntry]]
    noise: NoiseBlock = Field(default_factory=NoiseBlock)
    reduction: ReductionBlock = Field(default_factory=ReductionBlock)
    estimators: list[EstimatorBlock] = Field(min_length=1)
    tuning: Optional[TuningBlock] = None
    sweep: Optional[SweepBlock] = None
    output: OutputBlock = Field(default_factory=OutputBlock)

    @model_validator(mode="after")
    def _cross_checks(self):
        f = self.model.floors
        if any(fl > f for fl in self.model.input_floors):
            raise ValueError(f"input_floors must lie in 1..{f}")
        if not isinstance(self.sensors, str) and any(s.floor > f for s in self.sensors):
            raise ValueError(f"sensor floors must lie in 1..{f}")
        for modes in (self.reduction.truth_modes, self.reduction.estimator_modes):
            if modes is not None and modes > f:
                raise ValueError(f"mode counts must not exceed {f}")
        labels = [e.name for e in self.estimators]
        if len(set(labels)) != len(labels):
            raise ValueError(f"estimator labels must be unique, got {labels}")
        return self


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  {loc}: {err['msg']}")
    return "invalid configuration:\n" + "\n".join(lines)


def parse_config(data) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("invalid configuration: top level must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: YAML syntax error: {exc}") from None
    cfg = parse_config(data)
    if cfg.excitation.path and not Path(cfg.excitation.path).is_absolute():
        cfg.excitation.path = str((path.parent / cfg.excitation.path).resolve())
    return cfg
