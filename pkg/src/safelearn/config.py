"""JSON configuration documents for the scenario and field-demo commands.

Field names carry their units (``dt_s``, ``radius_m``). Validation errors are
reported with a dotted path such as ``obstacles[3].radius_m``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError
from .scenario import GaussianNoise, Obstacle, Scenario, UniformBoxNoise

CONFIG_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class StartState(_Strict):
    x1_m: float
    x2_m: float
    yaw_rad: float


class GoalPoint(_Strict):
    x1_m: float
    x2_m: float


class ObstacleDoc(_Strict):
    center_m: tuple[float, float]
    radius_m: float = Field(gt=0)


class GaussianNoiseDoc(_Strict):
    kind: Literal["gaussian"]
    mean: list[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])
    covariance: Optional[list[list[float]]] = None
    variance: Optional[float] = Field(default=None, ge=0)

    def build(self):
        mean = np.asarray(self.mean, dtype=float)
        if self.covariance is not None:
            cov = np.asarray(self.covariance, dtype=float)
        elif self.variance is not None:
            cov = self.variance * np.eye(mean.size)
        else:
            raise ConfigError("noise: give either 'covariance' or 'variance'")
        if cov.shape != (mean.size, mean.size):
            raise ConfigError("noise.covariance must be square and match noise.mean")
        return GaussianNoise(mean, cov)


class UniformNoiseDoc(_Strict):
    kind: Literal["uniform_box"]
    mean: list[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])
    half_width: list[float]

    def build(self):
        return UniformBoxNoise(np.asarray(self.mean, dtype=float), np.asarray(self.half_width, dtype=float))


class Gains(_Strict):
    speed: float = 0.1
    yaw: float = 0.03


class ScenarioDoc(_Strict):
    schema_version: int = CONFIG_VERSION
    dt_s: float = Field(gt=0)
    start: StartState
    goal: GoalPoint
    robot_clearance_m: float = Field(ge=0)
    obstacles: list[ObstacleDoc] = Field(default_factory=list)
    noise: Union[GaussianNoiseDoc, UniformNoiseDoc] = Field(discriminator="kind")
    horizon_steps: int = Field(gt=0)
    delta: float = Field(gt=0, lt=1)
    sigma: Optional[float] = Field(default=None, gt=0)
    zeta: Optional[float] = Field(default=None, gt=0)
    nu: Optional[float] = Field(default=None, gt=0)
    kappa: Optional[float] = Field(default=None, gt=0)
    seed: int = Field(default=0, ge=0)
    algorithm: str = "algorithm1"
    goal_tolerance_m: float = Field(default=2.0, gt=0)
    stop_at_goal: bool = True
    sensing_radius_m: Optional[float] = Field(default=None, gt=0)
    gains: Gains = Field(default_factory=Gains)
    escape_offset_m: float = Field(default=1.0, ge=0)
    infeasible_policy: Literal["stop", "nominal"] = "stop"

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v):
        if v != CONFIG_VERSION:
            raise ValueError(f"unsupported schema_version {v}, expected {CONFIG_VERSION}")
        return v

    def build(self) -> Scenario:
        return Scenario(
            dt=self.dt_s,
            start=(self.start.x1_m, self.start.x2_m, self.start.yaw_rad),
            goal=(self.goal.x1_m, self.goal.x2_m),
            obstacles=tuple(Obstacle(tuple(o.center_m), o.radius_m) for o in self.obstacles),
            r_o=self.robot_clearance_m,
            noise=self.noise.build(),
            horizon=self.horizon_steps,
            delta=self.delta,
            sigma=self.sigma,
            seed=self.seed,
            goal_tolerance=self.goal_tolerance_m,
            stop_at_goal=self.stop_at_goal,
            sensing_radius=self.sensing_radius_m,
            gains=(self.gains.speed, self.gains.yaw),
            escape_offset=self.escape_offset_m,
            zeta=self.zeta,
            nu=self.nu,
            kappa=self.kappa,
            infeasible_policy=self.infeasible_policy,
        )


class FieldBlock(_Strict):
    lower_m: list[float]
    upper_m: list[float]
    mean: list[float]
    covariance: list[list[float]]


class FieldConstants(_Strict):
    rho1: float = Field(ge=0)
    rho2: float = Field(ge=0)
    varrho1: float = Field(ge=0)
    varrho2: float = Field(ge=0)
    nu: float = Field(gt=0)
    sigma: float = Field(gt=0)


class FieldDoc(_Strict):
    schema_version: int = CONFIG_VERSION
    lower_m: list[float]
    upper_m: list[float]
    cell_size_m: Union[float, list[float]]
    reach_m: float = Field(default=0.0, ge=0)
    blocks: list[FieldBlock] = Field(min_length=1)
    constants: FieldConstants
    delta: float = Field(gt=0, lt=1)
    samples: int = Field(gt=0)
    merge_every: int = Field(default=100, gt=0)
    seed: int = Field(default=0, ge=0)

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v):
        if v != CONFIG_VERSION:
            raise ValueError(f"unsupported schema_version {v}, expected {CONFIG_VERSION}")
        return v


def _loc_to_path(loc) -> str:
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        elif part in ("gaussian", "uniform_box"):
            continue
        else:
            out += ("." if out else "") + str(part)
    return out


def _format_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        lines.append(f"{_loc_to_path(err['loc']) or '<root>'}: {err['msg']}")
    return "; ".join(lines)


def _parse(model, source):
    if isinstance(source, Path):
        text = source.read_text(encoding="utf-8")
    elif isinstance(source, dict):
        text = json.dumps(source)
    else:
        text = str(source)
    try:
        return model.model_validate_json(text)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None


def load_scenario(source) -> tuple[ScenarioDoc, Scenario]:
    """Parse a scenario document given as a ``Path``, JSON text or dict."""
    doc = _parse(ScenarioDoc, source)
    return doc, doc.build()


def load_field(source) -> FieldDoc:
    return _parse(FieldDoc, source)
