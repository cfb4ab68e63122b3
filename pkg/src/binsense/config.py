"""Scenario files: YAML validated into pydantic models."""

from __future__ import annotations

import hashlib
import math
import os
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from binsense.errors import BinsenseError
from binsense.geometry import (
    Bounds,
    ConstantAcceleration,
    ConstantVelocity,
    GaussianRandomWalk,
    Leg,
    MultiLeg,
    TrajectoryModel,
    cv_transition,
)
from binsense.ppr import KernelConfig
from binsense.track import TrackerConfig

Point = tuple[float, float]
ESTIMATORS = ("svm2d", "svm3d", "svm2p", "ppr")


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class FieldSpec(StrictModel):
    n: int = Field(100, ge=3)
    bounds: tuple[float, float, float, float] = (0.0, 0.0, 100.0, 100.0)
    # Fixed field for every replication; None draws it from the scenario seed
    seed: Optional[int] = Field(None, ge=0)

    @field_validator("bounds")
    @classmethod
    def _bounds_not_degenerate(cls, value):
        try:
            Bounds.of(value)
        except BinsenseError as exc:
            raise ValueError(str(exc)) from exc
        return value

    def region(self) -> Bounds:
        return Bounds.of(self.bounds)


class ConstantVelocityMotion(StrictModel):
    model: Literal["constant_velocity"]
    x0: Point
    v: Point

    @field_validator("v")
    @classmethod
    def _nonzero(cls, value):
        if value[0] == 0 and value[1] == 0:
            raise ValueError("velocity must be nonzero")
        return value

    def build(self, period: float) -> TrajectoryModel:
        return ConstantVelocity(self.x0, self.v)


class LegSpec(StrictModel):
    velocity: Point
    end_time: float = Field(gt=0)


class MultiLegMotion(StrictModel):
    model: Literal["multi_leg"]
    x0: Point
    legs: list[LegSpec] = Field(min_length=1)

    @field_validator("legs")
    @classmethod
    def _increasing(cls, legs):
        ends = [leg.end_time for leg in legs]
        if any(b <= a for a, b in zip(ends, ends[1:])):
            raise ValueError(f"leg end times must be strictly increasing, got {ends}")
        return legs

    def build(self, period: float) -> TrajectoryModel:
        return MultiLeg(self.x0, tuple(Leg(leg.velocity, leg.end_time) for leg in self.legs))


class ConstantAccelerationMotion(StrictModel):
    model: Literal["constant_acceleration"]
    x0: Point
    v0: Point
    a0: Point

    def build(self, period: float) -> TrajectoryModel:
        return ConstantAcceleration(self.x0, self.v0, self.a0)


class RandomWalkMotion(StrictModel):
    """Constant-velocity transition with diagonal process noise (variances per period)."""

    model: Literal["random_walk"]
    x0: Point
    v0: Point
    q_position: float = Field(0.0, ge=0)
    q_velocity: float = Field(0.01, ge=0)

    def build(self, period: float) -> TrajectoryModel:
        Q = np.diag([self.q_position, self.q_position, self.q_velocity, self.q_velocity])
        return GaussianRandomWalk(self.x0, self.v0, cv_transition(period), Q, period)


MotionSpec = Annotated[
    Union[ConstantVelocityMotion, MultiLegMotion, ConstantAccelerationMotion, RandomWalkMotion],
    Field(discriminator="model"),
]


class ObservationSpec(StrictModel):
    period: float = Field(1.0, gt=0)
    duration: float = Field(40.0, gt=0)
    p: float = Field(1.0, gt=0, le=1)

    @property
    def n_samples(self) -> int:
        return int(math.floor(self.duration / self.period + 1e-9))

    @model_validator(mode="after")
    def _two_samples(self):
        if self.n_samples < 2:
            raise ValueError(f"duration/period must give at least 2 samples, got {self.n_samples}")
        return self


class EstimatorSpec(StrictModel):
    method: Literal["svm2d", "svm3d", "svm2p", "ppr"] = "ppr"
    C: float = Field(10.0, gt=0)
    h: Optional[float] = Field(None, gt=0)
    kernel: Literal["gaussian", "epanechnikov"] = "gaussian"
    grid: int = Field(360, ge=8)
    k: int = Field(5, ge=2)
    vs_moy: Literal["midpoint", "lower", "upper"] = "midpoint"
    eps_parallel: float = Field(1e-3, ge=0)
    theta_eps: float = Field(1e-3, ge=0)
    sigma_min: float = Field(0.1, ge=0)

    def kernel_config(self, field) -> KernelConfig:
        if self.h is None:
            return KernelConfig.default_for(field, self.kernel)
        return KernelConfig(self.h, self.kernel)

    def tracker_config(self, period: float) -> TrackerConfig:
        return TrackerConfig(
            k=self.k,
            vs_moy=self.vs_moy,
            eps_parallel=self.eps_parallel,
            theta_eps=self.theta_eps,
            sigma_min=self.sigma_min,
            C=self.C,
            period=period,
        )


class BenchSpec(StrictModel):
    mode: Literal["sweep", "track"] = "sweep"
    reps: int = Field(200, ge=1)
    # Sensor counts of a sweep; empty means the field's n only
    sweep: list[int] = Field(default_factory=list)

    @field_validator("sweep")
    @classmethod
    def _at_least_three(cls, values):
        if any(n < 3 for n in values):
            raise ValueError("every swept sensor count must be >= 3")
        return values


class OutputSpec(StrictModel):
    dir: str = "out"


class ScenarioConfig(StrictModel):
    name: str = "scenario"
    seed: int = Field(0, ge=0, le=2**64 - 1)
    field: FieldSpec = Field(default_factory=FieldSpec)
    motion: MotionSpec
    observation: ObservationSpec = Field(default_factory=ObservationSpec)
    estimator: EstimatorSpec = Field(default_factory=EstimatorSpec)
    bench: BenchSpec = Field(default_factory=BenchSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)

    def trajectory(self) -> TrajectoryModel:
        return self.motion.build(self.observation.period)

    @property
    def stochastic(self) -> bool:
        return isinstance(self.motion, RandomWalkMotion)


class ConfigError(BinsenseError):
    """A scenario file that does not parse or validate; details are field-level."""

    def __init__(self, message: str, details: list[dict]):
        super().__init__(message)
        self.details = details


def _details(exc: ValidationError) -> list[dict]:
    return [
        {"loc": ".".join(str(part) for part in err["loc"]), "msg": err["msg"], "type": err["type"]}
        for err in exc.errors()
    ]


def parse_scenario(data) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a mapping", [{"loc": "", "msg": "expected a mapping at top level"}])
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{exc.error_count()} invalid field(s)", _details(exc)) from exc


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}", [{"loc": "", "msg": str(exc)}]) from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML", [{"loc": "", "msg": str(exc)}]) from exc
    return parse_scenario(data)


def resolve_seed(config: ScenarioConfig, cli_seed: int | None = None) -> int:
    """--seed, then BT_SEED, then the scenario file."""
    if cli_seed is not None:
        return cli_seed
    env = os.getenv("BT_SEED")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError("BT_SEED must be an integer", [{"loc": "BT_SEED", "msg": env}]) from exc
    return config.seed


def with_overrides(
    config: ScenarioConfig,
    seed: int | None = None,
    reps: int | None = None,
    estimator: str | None = None,
    out: str | None = None,
) -> ScenarioConfig:
    """Apply command-line overrides and validate the result."""
    data = config.model_dump()
    data["seed"] = resolve_seed(config, seed)
    if reps is not None:
        data["bench"]["reps"] = reps
    if estimator is not None:
        data["estimator"]["method"] = estimator
    if out is not None:
        data["output"]["dir"] = out
    return parse_scenario(data)


def config_hash(config: ScenarioConfig) -> str:
    """Digest of the scenario content; the output location is not part of it."""
    return hashlib.sha256(config.model_dump_json(exclude={"output"}).encode("utf-8")).hexdigest()
