"""
Scenario and benchmark-sweep documents
Strict pydantic models for the JSON scenario file (unknown keys rejected,
angles in radians or with an explicit `_deg` suffix) and loaders that turn
parse / validation failures into configuration errors.
"""

import json
import math
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from benchmark import Sweep
from config import settings
from costmodel import CineRule, DiversityParams, Weights
from errors import ConfigurationError
from harness import Scenario
from lattice import ActorPose, CameraPose, LatticeSpec
from selector import SelectorConfig
from smoother import SmootherConfig, waypoint_sample_indices
from world import ActorScript, Box, Cylinder, SceneDescription

logger = logging.getLogger(__name__)

Vec3 = Tuple[float, float, float]
Range = Tuple[float, float]


def _degrees_to_radians(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return [math.radians(v) for v in value]
    return math.radians(value)


class StrictModel(BaseModel):
    """Base for every scenario section: unknown keys are errors, `<key>_deg` becomes `<key>` in radians"""

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="before")
    @classmethod
    def _convert_degrees(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        converted = dict(data)
        for key in list(data):
            if not key.endswith("_deg"):
                continue
            base = key[: -len("_deg")]
            if base not in cls.model_fields:
                # Left in place so extra="forbid" reports it
                continue
            if base in data:
                raise ValueError(f"give either '{base}' or '{key}', not both")
            value = converted.pop(key)
            converted[base] = None if value is None else _degrees_to_radians(value)
        return converted


def _domain(build):
    """Run a domain constructor, re-raising its ConfigurationError as a pydantic ValueError"""
    try:
        return build()
    except ConfigurationError as e:
        raise ValueError(e.message) from e


# Scene

class BoxModel(StrictModel):
    min: Vec3
    max: Vec3

    @model_validator(mode="after")
    def _ordered(self) -> "BoxModel":
        if any(hi <= lo for lo, hi in zip(self.min, self.max)):
            raise ValueError(f"box max {self.max} must exceed min {self.min} on every axis")
        return self


class CylinderModel(StrictModel):
    center: Tuple[float, float]
    radius: float = Field(gt=0.0)
    z_min: float
    z_max: float

    @model_validator(mode="after")
    def _ordered(self) -> "CylinderModel":
        if self.z_max <= self.z_min:
            raise ValueError(f"cylinder z_max {self.z_max} must exceed z_min {self.z_min}")
        return self


class SceneModel(StrictModel):
    bounds_min: Vec3 = (-15.0, -15.0, 0.0)
    bounds_max: Vec3 = (15.0, 15.0, 10.0)
    resolution: float = Field(default=0.25, gt=0.0, description="Voxel edge length [m]")
    boxes: List[BoxModel] = Field(default_factory=list)
    cylinders: List[CylinderModel] = Field(default_factory=list)

    @model_validator(mode="after")
    def _bounds(self) -> "SceneModel":
        if any(hi <= lo for lo, hi in zip(self.bounds_min, self.bounds_max)):
            raise ValueError(f"empty scene bounds {self.bounds_min} .. {self.bounds_max}")
        return self

    def to_scene(self) -> SceneDescription:
        return SceneDescription(
            bounds_min=self.bounds_min,
            bounds_max=self.bounds_max,
            boxes=[Box(b.min, b.max) for b in self.boxes],
            cylinders=[Cylinder(c.center, c.radius, c.z_min, c.z_max) for c in self.cylinders],
        )


# Actor and UAVs

class ActorWaypointModel(StrictModel):
    t: float
    position: Vec3
    heading: float = Field(default=0.0, description="Actor heading [rad]")


class ActorModel(StrictModel):
    waypoints: List[ActorWaypointModel] = Field(min_length=1)

    @model_validator(mode="after")
    def _script(self) -> "ActorModel":
        _domain(self.to_script)
        return self

    def to_script(self) -> ActorScript:
        return ActorScript(
            times=[w.t for w in self.waypoints],
            poses=[ActorPose(*w.position, heading=w.heading) for w in self.waypoints],
        )


class UavModel(StrictModel):
    id: int = Field(ge=0)
    position: Vec3
    yaw: float = Field(default=0.0, description="Initial yaw [rad]")

    def to_pose(self) -> CameraPose:
        return CameraPose(*self.position, yaw=self.yaw)


# Planner configuration

class LatticeModel(StrictModel):
    n_theta: int = 16
    n_phi: int = 6
    rho_values: List[float] = Field(default_factory=lambda: [2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
    horizon_steps: int = 5
    step_dt: float = 2.0
    include_pole: bool = False

    @model_validator(mode="after")
    def _spec(self) -> "LatticeModel":
        _domain(self.to_spec)
        return self

    def to_spec(self) -> LatticeSpec:
        return LatticeSpec(
            n_theta=self.n_theta,
            n_phi=self.n_phi,
            rho_values=tuple(self.rho_values),
            horizon_steps=self.horizon_steps,
            step_dt=self.step_dt,
            include_pole=self.include_pole,
        )


class PriorRuleModel(StrictModel):
    cost: float = Field(ge=0.0)
    theta_range: Optional[Range] = None
    phi_range: Optional[Range] = None
    rho_range: Optional[Range] = None

    def to_rule(self) -> CineRule:
        return CineRule(self.cost, self.theta_range, self.phi_range, self.rho_range)


class PriorModel(StrictModel):
    preset: Optional[Literal["overhead", "low_angle"]] = None
    preset_cost: float = Field(default=1.0, ge=0.0)
    rules: List[PriorRuleModel] = Field(default_factory=list)


class DiversityModel(StrictModel):
    d_min_div: float = 1.0
    d_max_div: float = 6.0
    d_min_col: float = 0.5
    d_max_col: float = 1.0

    @model_validator(mode="after")
    def _params(self) -> "DiversityModel":
        _domain(self.to_params)
        return self

    def to_params(self) -> DiversityParams:
        return DiversityParams(self.d_min_div, self.d_max_div, self.d_min_col, self.d_max_col)


class WeightsModel(StrictModel):
    lambda_occ: float = 1.0
    lambda_obs: float = 1.0
    lambda_div: float = 1.0
    lambda_vis: float = 1.0
    lambda_cine: float = 1.0
    lambda_col: float = 1.0
    fov_half_angle: float = Field(default=math.radians(50.0), gt=0.0, le=math.pi)
    r_max: float = Field(default=1.0, ge=0.0, description="Obstacle cost radius [m]")
    diversity: DiversityModel = Field(default_factory=DiversityModel)
    prior: PriorModel = Field(default_factory=PriorModel)

    @model_validator(mode="after")
    def _weights(self) -> "WeightsModel":
        _domain(self.to_weights)
        return self

    def to_weights(self) -> Weights:
        return Weights(
            lambda_occ=self.lambda_occ,
            lambda_obs=self.lambda_obs,
            lambda_div=self.lambda_div,
            lambda_vis=self.lambda_vis,
            lambda_cine=self.lambda_cine,
            lambda_col=self.lambda_col,
        )


class SmootherModel(StrictModel):
    w_smooth: float = 1.0
    w_track: float = 1.0
    w_obs: float = 50.0
    w_sep: float = 50.0
    w_occ: float = 0.0
    sep_distance: float = 1.0
    obstacle_margin: float = 0.5
    occ_margin: float = 0.25
    occ_samples: int = 8
    fine_dt: float = 0.5
    max_iters: int = 100
    step_size: float = 0.1
    convergence_tol: float = 1e-6
    metric_damping: float = 0.1
    check_substeps: int = 4

    @model_validator(mode="after")
    def _config(self) -> "SmootherModel":
        _domain(self.to_config)
        return self

    def to_config(self) -> SmootherConfig:
        return SmootherConfig(**self.model_dump())


class SelectorModel(StrictModel):
    w_vis: float = 1.0
    w_cine: float = 1.0
    decay_rate: float = 0.7
    recovery_rate: float = 0.2
    min_shot: float = 3.0
    max_shot: float = 8.0

    @model_validator(mode="after")
    def _config(self) -> "SelectorModel":
        _domain(self.to_config)
        return self

    def to_config(self) -> SelectorConfig:
        return SelectorConfig(**self.model_dump())


class RunModel(StrictModel):
    duration: float = Field(default=10.0, gt=0.0, description="Simulated time [s]")
    replan_hz: float = Field(default=5.0, gt=0.0)
    sample_hz: float = Field(default=50.0, gt=0.0)
    seed: int = 0
    forecast_noise: float = Field(default=0.0, ge=0.0, description="Std. dev. of actor forecast position noise [m]")
    planning_order: Optional[List[int]] = None


class ScenarioFile(StrictModel):
    """Complete scenario document"""
    scene: SceneModel = Field(default_factory=SceneModel)
    actor: ActorModel
    uavs: List[UavModel] = Field(min_length=1)
    lattice: LatticeModel = Field(default_factory=LatticeModel)
    weights: WeightsModel = Field(default_factory=WeightsModel)
    smoother: SmootherModel = Field(default_factory=SmootherModel)
    selector: SelectorModel = Field(default_factory=SelectorModel)
    run: RunModel = Field(default_factory=RunModel)

    @model_validator(mode="after")
    def _consistent(self) -> "ScenarioFile":
        ids = [u.id for u in self.uavs]
        if len(set(ids)) != len(ids):
            raise ValueError(f"uav ids must be unique, got {ids}")
        if self.run.planning_order is not None and sorted(self.run.planning_order) != sorted(ids):
            raise ValueError(f"run.planning_order {self.run.planning_order} must be a permutation of uav ids {ids}")

        waypoints = self.actor.waypoints
        start, end = waypoints[0].t, waypoints[-1].t
        if end - start < self.run.duration - 1e-9:
            raise ValueError(
                f"actor script covers {end - start:.3f} s but run.duration is {self.run.duration:.3f} s"
            )
        _domain(lambda: waypoint_sample_indices(self.lattice.horizon_steps, self.lattice.step_dt, self.smoother.fine_dt))
        return self

    def to_scenario(self) -> Scenario:
        """Domain objects for the harness"""
        w = self.weights
        lattice = self.lattice.to_spec()
        return Scenario(
            scene=self.scene.to_scene(),
            resolution=self.scene.resolution,
            actor=self.actor.to_script(),
            uav_ids=[u.id for u in self.uavs],
            uav_starts=[u.to_pose() for u in self.uavs],
            lattice=lattice,
            weights=w.to_weights(),
            diversity=w.diversity.to_params(),
            fov_half_angle=w.fov_half_angle,
            r_max=w.r_max,
            prior_rules=[r.to_rule() for r in w.prior.rules],
            prior_preset=w.prior.preset,
            prior_preset_cost=w.prior.preset_cost,
            smoother=self.smoother.to_config(),
            selector=self.selector.to_config(),
            duration=self.run.duration,
            replan_hz=self.run.replan_hz,
            sample_hz=self.run.sample_hz,
            seed=self.run.seed,
            forecast_noise=self.run.forecast_noise,
            planning_order=self.run.planning_order,
        )

    @classmethod
    def reference(cls) -> "ScenarioFile":
        """Documented defaults: one UAV filming a stationary actor in an empty world"""
        return cls(
            actor=ActorModel(waypoints=[
                ActorWaypointModel(t=0.0, position=(0.0, 0.0, 1.0)),
                ActorWaypointModel(t=10.0, position=(0.0, 0.0, 1.0)),
            ]),
            uavs=[UavModel(id=0, position=(4.0, 0.0, 3.0))],
        )


# Benchmark sweep

class SweepSpecModel(StrictModel):
    n_theta: int
    n_phi: int
    n_rho: int
    rho_min: float = 2.0
    rho_spacing: float = 1.0

    @model_validator(mode="after")
    def _spec(self) -> "SweepSpecModel":
        _domain(self.to_spec)
        return self

    def to_spec(self, horizon_steps: int = 5) -> LatticeSpec:
        return LatticeSpec.uniform(
            self.n_theta, self.n_phi, self.n_rho, self.rho_min, self.rho_spacing, horizon_steps=horizon_steps
        )


class SweepWorldModel(StrictModel):
    n_obstacles: int = Field(default=20, ge=0)
    extent: float = Field(default=15.0, gt=0.0, description="Half-width of the random world [m]")
    resolution: float = Field(default=0.5, gt=0.0)


class BenchSweepFile(StrictModel):
    """Benchmark sweep: every (spec, n_uavs, horizon_steps) combination is timed"""
    specs: List[SweepSpecModel] = Field(min_length=1)
    n_uavs: List[int] = Field(default_factory=lambda: [3], min_length=1)
    horizon_steps: List[int] = Field(default_factory=lambda: [5], min_length=1)
    repetitions: int = Field(default_factory=lambda: settings.bench_repetitions, ge=1)
    batch: int = Field(default=1, ge=1, description="Back-to-back plans per timed repetition")
    seed: int = 0
    max_table_bytes: int = Field(default_factory=lambda: settings.max_table_bytes, ge=1)
    world: SweepWorldModel = Field(default_factory=SweepWorldModel)
    weights: WeightsModel = Field(default_factory=WeightsModel)

    @model_validator(mode="after")
    def _positive(self) -> "BenchSweepFile":
        if min(self.n_uavs) < 1 or min(self.horizon_steps) < 1:
            raise ValueError("n_uavs and horizon_steps entries must be >= 1")
        return self

    def to_sweep(self) -> Sweep:
        w = self.weights
        return Sweep(
            specs=[s.to_spec() for s in self.specs],
            n_uavs=list(self.n_uavs),
            horizon_steps=list(self.horizon_steps),
            repetitions=self.repetitions,
            batch=self.batch,
            seed=self.seed,
            max_table_bytes=self.max_table_bytes,
            n_obstacles=self.world.n_obstacles,
            extent=self.world.extent,
            resolution=self.world.resolution,
            weights=w.to_weights(),
            diversity=w.diversity.to_params(),
            fov_half_angle=w.fov_half_angle,
            r_max=w.r_max,
        )


def _format_validation_error(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        loc = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{loc}: {item['msg']}")
    return "; ".join(lines)


def _read_json(path: str) -> Dict[str, Any]:
    file_path = Path(path)
    if not file_path.is_file():
        raise ConfigurationError(f"file not found: {path}", module="scenario")
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: parse error at line {e.lineno}, column {e.colno}: {e.msg}", module="scenario")


def parse_scenario(data: Dict[str, Any], source: str = "<scenario>") -> ScenarioFile:
    try:
        return ScenarioFile.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"{source}: {_format_validation_error(e)}", module="scenario")


def load_scenario(path: str) -> ScenarioFile:
    document = parse_scenario(_read_json(path), source=path)
    logger.info(f"Loaded scenario {path} ({len(document.uavs)} UAVs, {document.run.duration} s)")
    return document


def load_sweep(path: str) -> BenchSweepFile:
    data = _read_json(path)
    try:
        return BenchSweepFile.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"{path}: {_format_validation_error(e)}", module="scenario")


def dump_document(document: BaseModel) -> Dict[str, Any]:
    """JSON-ready dict with every default spelled out; parses back to an equal document"""
    return document.model_dump(mode="json")
