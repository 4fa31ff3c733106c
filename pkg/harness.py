"""
Receding-horizon simulation harness
Replans the camera team at replan_hz against the scripted actor, smooths each
UAV's coarse path concurrently, samples the fine paths at sample_hz and steps
the live stream selector. Writes the run report as JSON and CSV files.
"""

import csv
import json
import math
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from tqdm import tqdm

from config import settings
from costmodel import (
    TERMS,
    CineRule,
    CinePrior,
    CostModel,
    DiversityParams,
    PairTables,
    Weights,
    build_obstacle_kernel,
    build_pair_tables,
    visibility_pair,
)
from errors import ConfigurationError, PlannerError
from lattice import ActorPose, CameraPose, Lattice, LatticeSpec, build_lattice, nearest_state
from planner import PlanResult, plan_greedy
from selector import CameraCosts, LiveSelector, SelectorConfig
from smoother import (
    FinePath,
    SmootherConfig,
    SmootherContext,
    initial_positions,
    objective_terms,
    optimize,
    resample_clamped,
    sample,
    sample_count,
    waypoint_sample_indices,
)
from world import (
    ActorScript,
    DistanceField,
    SceneDescription,
    VoxelGrid,
    actor_at,
    distance_field,
    spherical_regrid,
    voxelize,
)

logger = logging.getLogger(__name__)

# Allowed inter-UAV shortfall below sep_distance in the safety audit [m]
SEPARATION_TOLERANCE = 0.1


@dataclass
class Scenario:
    """Everything one simulated run needs, in domain types"""
    scene: SceneDescription
    actor: ActorScript
    uav_ids: List[int]
    uav_starts: List[CameraPose]
    lattice: LatticeSpec = field(default_factory=LatticeSpec)
    resolution: float = 0.25
    weights: Weights = field(default_factory=Weights)
    diversity: DiversityParams = field(default_factory=DiversityParams)
    fov_half_angle: float = math.radians(50.0)
    r_max: float = 1.0
    prior_rules: List[CineRule] = field(default_factory=list)
    prior_preset: Optional[str] = None
    prior_preset_cost: float = 1.0
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    duration: float = 10.0
    replan_hz: float = 5.0
    sample_hz: float = 50.0
    seed: int = 0
    forecast_noise: float = 0.0
    planning_order: Optional[List[int]] = None

    def __post_init__(self):
        if len(self.uav_starts) < 1:
            raise ConfigurationError("Scenario: at least one UAV is required")
        if len(self.uav_ids) != len(self.uav_starts):
            raise ConfigurationError("Scenario: one id per UAV start pose")
        if len(set(self.uav_ids)) != len(self.uav_ids):
            raise ConfigurationError(f"Scenario: UAV ids must be unique, got {self.uav_ids}")
        if self.planning_order is not None and sorted(self.planning_order) != sorted(self.uav_ids):
            raise ConfigurationError(f"Scenario: planning_order {self.planning_order} is not a permutation of {self.uav_ids}")
        if not (self.duration > 0.0 and self.replan_hz > 0.0 and self.sample_hz > 0.0):
            raise ConfigurationError("Scenario: duration, replan_hz and sample_hz must be positive")
        if self.actor.end_time - self.actor.start_time < self.duration - 1e-9:
            raise ConfigurationError(
                f"Scenario: actor script covers {self.actor.end_time - self.actor.start_time:.3f} s, "
                f"shorter than duration {self.duration:.3f} s"
            )
        if self.lattice.horizon < 1.0 / self.replan_hz:
            raise ConfigurationError("Scenario: planning horizon is shorter than one replan cycle")
        if self.forecast_noise < 0.0:
            raise ConfigurationError("Scenario: forecast_noise must be non-negative")

    @property
    def order(self) -> List[int]:
        return list(self.planning_order) if self.planning_order is not None else list(self.uav_ids)

    @property
    def n_cycles(self) -> int:
        return max(1, math.ceil(self.duration * self.replan_hz - 1e-9))

    @property
    def n_samples(self) -> int:
        """Trajectory samples from t=0 through t=duration inclusive"""
        return int(round(self.duration * self.sample_hz)) + 1


@dataclass
class SafetyAudit:
    min_clearance: float
    min_separation: float
    obstacle_margin: float
    sep_distance: float
    resolution: float

    @property
    def clearance_ok(self) -> bool:
        return self.min_clearance >= self.obstacle_margin - self.resolution

    @property
    def separation_ok(self) -> bool:
        return self.min_separation >= self.sep_distance - SEPARATION_TOLERANCE

    @property
    def passed(self) -> bool:
        return self.clearance_ok and self.separation_ok

    def to_dict(self) -> Dict:
        return {
            "min_clearance": _finite_or_none(self.min_clearance),
            "min_separation": _finite_or_none(self.min_separation),
            "obstacle_margin": self.obstacle_margin,
            "sep_distance": self.sep_distance,
            "resolution": self.resolution,
            "clearance_ok": self.clearance_ok,
            "separation_ok": self.separation_ok,
            "passed": self.passed,
        }


@dataclass
class CycleRecord:
    cycle: int
    t: float
    plan_ms: float
    total_cost: float
    uav_costs: Dict[int, float]
    terms: Dict[str, float]
    smoother_iterations: Dict[int, int]
    smoother_objective: Dict[int, Tuple[float, float]]
    smoother_terms: Dict[int, Dict[str, float]]
    handoff_gap: float = 0.0
    reused_previous: bool = False


@dataclass
class RunReport:
    """Outcome of one simulated run"""
    uav_ids: List[int]
    times: np.ndarray
    trajectories: Dict[int, np.ndarray]
    actor: np.ndarray
    selection: np.ndarray
    selector_timeline: List[Tuple[float, float, int]]
    cycles: List[CycleRecord]
    fine_paths: List[Dict[int, FinePath]] = field(repr=False)
    table_bytes: int = 0
    safety: Optional[SafetyAudit] = None

    @property
    def plan_times_ms(self) -> List[float]:
        return [c.plan_ms for c in self.cycles]

    @property
    def plan_ms_mean(self) -> float:
        return statistics.mean(self.plan_times_ms)

    @property
    def plan_ms_std(self) -> float:
        times = self.plan_times_ms
        return statistics.stdev(times) if len(times) > 1 else 0.0

    def summary(self) -> Dict:
        shots = self.selector_timeline
        return {
            "uav_ids": self.uav_ids,
            "duration": float(self.times[-1] - self.times[0]),
            "n_samples": int(len(self.times)),
            "n_cycles": len(self.cycles),
            "planning_ms": {"mean": self.plan_ms_mean, "std": self.plan_ms_std},
            "table_bytes": self.table_bytes,
            "mean_cycle_cost": statistics.mean(c.total_cost for c in self.cycles),
            "max_handoff_gap": max(c.handoff_gap for c in self.cycles),
            "shots": len(shots),
            "safety": self.safety.to_dict() if self.safety else None,
        }


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


def audit_trajectories(
    trajectories: Dict[int, np.ndarray],
    sdf: DistanceField,
    obstacle_margin: float,
    sep_distance: float,
) -> SafetyAudit:
    """Minimum obstacle clearance and pairwise UAV distance over every emitted sample"""
    xyz = {uid: traj[:, 1:4] for uid, traj in trajectories.items()}
    min_clearance = math.inf
    if not sdf.is_empty:
        min_clearance = min(float(np.min(sdf.query(p))) for p in xyz.values())
    min_separation = math.inf
    ids = list(xyz)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            min_separation = min(min_separation, float(np.min(np.linalg.norm(xyz[a] - xyz[b], axis=1))))
    return SafetyAudit(min_clearance, min_separation, obstacle_margin, sep_distance, sdf.resolution)


@dataclass
class World:
    """Static per-run inputs shared by every cycle"""
    lattice: Lattice
    grid: VoxelGrid
    sdf: DistanceField
    tables: PairTables
    prior: CinePrior
    kernel: sparse.csr_matrix


def build_world(scenario: Scenario) -> World:
    lattice = build_lattice(scenario.lattice)
    grid = voxelize(scenario.scene, scenario.resolution)
    return World(
        lattice=lattice,
        grid=grid,
        sdf=distance_field(grid),
        tables=build_pair_tables(lattice, scenario.diversity, scenario.fov_half_angle),
        prior=CinePrior.from_rules(lattice, scenario.prior_rules, scenario.prior_preset, scenario.prior_preset_cost),
        kernel=build_obstacle_kernel(lattice, scenario.r_max),
    )


def forecast_window(scenario: Scenario, t: float, rng: np.random.Generator) -> List[ActorPose]:
    """Actor poses at the planning timesteps; future poses carry optional Gaussian position noise"""
    spec = scenario.lattice
    window = scenario.actor.window(t, spec.horizon_steps, spec.step_dt)
    if scenario.forecast_noise <= 0.0:
        return window
    noise = rng.normal(0.0, scenario.forecast_noise, size=(len(window), 3))
    # The current pose is observed, not forecast
    noise[0] = 0.0
    return [ActorPose(p.x + n[0], p.y + n[1], p.z + n[2], p.heading) for p, n in zip(window, noise)]


def plan_cycle(scenario: Scenario, world: World, window: Sequence[ActorPose], positions: Dict[int, np.ndarray]):
    """Regrid around the forecast and run the greedy planner from the UAVs' current positions"""
    sgrid = spherical_regrid(world.grid, window, world.lattice)
    model = CostModel(
        world.lattice, world.tables, sgrid, world.prior, scenario.weights, scenario.r_max, world.kernel
    )
    order = scenario.order
    starts = [nearest_state(CameraPose(*positions[uid]), window[0], scenario.lattice) for uid in order]
    plan = plan_greedy(starts, model, uav_ids=order)
    return plan, model


def plan_is_current(plan: PlanResult, observed: ActorPose, tol: float = 1e-9) -> bool:
    """True when the plan was built against the actor pose observed at this cycle"""
    if not plan.actor_stamp:
        return False
    stamp = plan.actor_stamp[0]
    turn = abs(stamp.heading - observed.heading)
    return (
        float(np.linalg.norm(stamp.position - observed.position)) <= tol
        and min(turn, 2.0 * math.pi - turn) <= tol
    )


def _actor_positions(script: ActorScript, times: np.ndarray) -> np.ndarray:
    clamped = np.clip(times, script.start_time, script.end_time)
    return np.array([actor_at(script, float(t)).position for t in clamped])


def smooth_cycle(
    scenario: Scenario,
    world: World,
    plan: PlanResult,
    model: CostModel,
    t: float,
    positions: Dict[int, np.ndarray],
    previous: Dict[int, FinePath],
    max_threads: int,
) -> Tuple[Dict[int, FinePath], Dict[int, SmootherContext]]:
    """Optimize every UAV's fine path concurrently from immutable per-cycle snapshots"""
    spec = scenario.lattice
    cfg = scenario.smoother
    n = sample_count(spec.horizon, cfg.fine_dt)
    fine_times = t + np.arange(n) * cfg.fine_dt
    wp_samples = waypoint_sample_indices(spec.horizon_steps, spec.step_dt, cfg.fine_dt)
    actor = _actor_positions(scenario.actor, fine_times) if cfg.w_occ > 0.0 else None

    waypoints = {
        path.uav_id: model.sgrid.positions[np.arange(len(path.states)), np.asarray(path.states)]
        for path in plan.paths
    }
    expected = {}
    for uid in scenario.uav_ids:
        if uid in previous:
            expected[uid] = resample_clamped(previous[uid], fine_times)
        else:
            # First cycle: other UAVs are expected on their interpolated greedy paths
            bare = SmootherContext(waypoints[uid], wp_samples, world.sdf)
            expected[uid] = initial_positions(positions[uid], bare, n)

    contexts = {
        uid: SmootherContext(
            waypoints=waypoints[uid],
            waypoint_samples=wp_samples,
            sdf=world.sdf,
            others=[expected[o] for o in scenario.uav_ids if o != uid],
            actor=actor,
        )
        for uid in scenario.uav_ids
    }

    results: Dict[int, FinePath] = {}
    workers = max(1, min(max_threads, len(contexts)))
    with ThreadPoolExecutor(max_workers=workers) as executor:
        future_to_uav = {
            executor.submit(optimize, positions[uid], ctx, cfg, spec.horizon, uid, t): uid
            for uid, ctx in contexts.items()
        }
        for future in as_completed(future_to_uav):
            uid = future_to_uav[future]
            try:
                results[uid] = future.result()
            except Exception as e:
                logger.error(f"Smoother failed for UAV {uid}: {e}")
                raise
    return results, contexts


def camera_costs(
    positions: Sequence[np.ndarray],
    actor: ActorPose,
    world: World,
    scenario: Scenario,
) -> List[CameraCosts]:
    """Selector inputs: peers inside each camera's view cone, and the prior at its nearest viewpoint"""
    costs = []
    for i, p in enumerate(positions):
        vis = sum(
            visibility_pair(p, q, actor.position, scenario.fov_half_angle)
            for j, q in enumerate(positions)
            if j != i
        )
        state = world.lattice.spec.linear(nearest_state(CameraPose(*p), actor, scenario.lattice))
        costs.append(CameraCosts(vis_cost=float(vis), cine_cost=world.prior[state]))
    return costs


def _yaw_toward(position: np.ndarray, target: np.ndarray) -> float:
    return CameraPose.facing(position, target).yaw


def run_scenario(scenario: Scenario, max_threads: Optional[int] = None, progress: bool = False) -> RunReport:
    """Simulate the full run; deterministic for a fixed scenario and seed"""
    max_threads = max_threads or settings.max_threads
    world = build_world(scenario)
    rng = np.random.default_rng(scenario.seed)
    ids = scenario.uav_ids
    t0 = scenario.actor.start_time
    n_cycles = scenario.n_cycles
    replan_dt = 1.0 / scenario.replan_hz
    sample_dt = 1.0 / scenario.sample_hz

    times = t0 + np.arange(scenario.n_samples) * sample_dt
    cycle_of_sample = np.minimum(np.floor((times - t0) * scenario.replan_hz + 1e-9).astype(int), n_cycles - 1)
    trajectories = {uid: np.zeros((len(times), 5)) for uid in ids}
    actor_track = np.zeros((len(times), 4))
    selection = np.zeros(len(times), dtype=int)
    selector = LiveSelector(scenario.selector, n_cameras=len(ids), t=t0)

    positions = {uid: pose.position for uid, pose in zip(ids, scenario.uav_starts)}
    previous: Dict[int, FinePath] = {}
    previous_contexts: Dict[int, SmootherContext] = {}
    cycles: List[CycleRecord] = []
    fine_paths: List[Dict[int, FinePath]] = []

    logger.info(
        f"Running {scenario.duration:.1f} s with {len(ids)} UAVs: {n_cycles} cycles at {scenario.replan_hz:g} Hz, "
        f"lattice {scenario.lattice.n_theta}x{scenario.lattice.n_phi}x{scenario.lattice.n_rho}"
    )
    for cycle in tqdm(range(n_cycles), desc="Simulating", disable=not progress):
        t = t0 + cycle * replan_dt
        try:
            window = forecast_window(scenario, t, rng)
            plan, model = plan_cycle(scenario, world, window, positions)
            reused = bool(previous) and not plan_is_current(plan, window[0])
            if reused:
                logger.warning(f"cycle {cycle}: plan is stamped for another actor pose, keeping the previous fine paths")
                fine, contexts = previous, previous_contexts
            else:
                fine, contexts = smooth_cycle(scenario, world, plan, model, t, positions, previous, max_threads)

            handoff_gap = max(float(np.linalg.norm(sample(fine[uid], t) - positions[uid])) for uid in ids)
            breakdown = plan.to_dict(model)
            terms = dict.fromkeys(TERMS, 0.0)
            for uav in breakdown["uavs"]:
                for step in uav["waypoints"]:
                    for name in TERMS:
                        terms[name] += step["terms"][name]
            cycles.append(CycleRecord(
                cycle=cycle,
                t=t,
                plan_ms=plan.duration * 1000.0,
                total_cost=plan.total_cost,
                uav_costs={p.uav_id: c for p, c in zip(plan.paths, plan.costs)},
                terms=terms,
                smoother_iterations={uid: fine[uid].iterations for uid in ids},
                smoother_objective={uid: (fine[uid].objective_trace[0], fine[uid].objective_trace[-1]) for uid in ids},
                smoother_terms={uid: objective_terms(fine[uid].positions, contexts[uid], scenario.smoother) for uid in ids},
                handoff_gap=handoff_gap,
                reused_previous=reused,
            ))
            fine_paths.append(fine)

            # Vehicles track the fine paths exactly until the next cycle
            for j in np.flatnonzero(cycle_of_sample == cycle):
                ts = float(times[j])
                actor = actor_at(scenario.actor, min(ts, scenario.actor.end_time))
                actor_track[j] = (ts, actor.x, actor.y, actor.z)
                sampled = [sample(fine[uid], ts) for uid in ids]
                for uid, p in zip(ids, sampled):
                    trajectories[uid][j] = (ts, p[0], p[1], p[2], _yaw_toward(p, actor.position))
                if j < len(times) - 1:
                    selection[j] = ids[selector.advance(camera_costs(sampled, actor, world, scenario), sample_dt)]
                else:
                    selection[j] = ids[selector.state.current]

            if cycle < n_cycles - 1:
                positions = {uid: sample(fine[uid], t + replan_dt) for uid in ids}
            previous, previous_contexts = fine, contexts
        except PlannerError as e:
            raise e.with_context(cycle=cycle)

        logger.debug(
            f"cycle {cycle} t={t:.2f}s plan {cycles[-1].plan_ms:.2f} ms cost {cycles[-1].total_cost:.4f}"
        )

    timeline = [(begin, end, ids[cam]) for begin, end, cam in selector.timeline()]
    report = RunReport(
        uav_ids=list(ids),
        times=times,
        trajectories=trajectories,
        actor=actor_track,
        selection=selection,
        selector_timeline=timeline,
        cycles=cycles,
        fine_paths=fine_paths,
        table_bytes=world.tables.nbytes,
        safety=audit_trajectories(trajectories, world.sdf, scenario.smoother.obstacle_margin, scenario.smoother.sep_distance),
    )
    logger.info(
        f"Run finished: planning {report.plan_ms_mean:.2f} ± {report.plan_ms_std:.2f} ms per cycle, "
        f"{len(timeline)} shots, safety audit {'passed' if report.safety.passed else 'FAILED'}"
    )
    return report


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def write_report(report: RunReport, out_dir: str) -> Path:
    """summary.json, costs.csv, trajectory_uav<id>.csv, selector.csv and fine_paths.json under out_dir"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "summary.json", "w") as f:
        json.dump(report.summary(), f, indent=2)

    _write_csv(
        out / "costs.csv",
        ["cycle", "t", "plan_ms", "total_cost", *TERMS, "smoother_iterations", "smoother_objective"],
        [
            [c.cycle, f"{c.t:.6f}", f"{c.plan_ms:.4f}", repr(c.total_cost), *(repr(c.terms[n]) for n in TERMS),
             sum(c.smoother_iterations.values()), repr(sum(obj[1] for obj in c.smoother_objective.values()))]
            for c in report.cycles
        ],
    )

    for uid, traj in report.trajectories.items():
        _write_csv(out / f"trajectory_uav{uid}.csv", ["t", "x", "y", "z", "yaw"], [[repr(float(v)) for v in row] for row in traj])

    _write_csv(
        out / "selector.csv",
        ["t_start", "t_end", "camera_id"],
        [[f"{begin:.6f}", f"{end:.6f}", cam] for begin, end, cam in report.selector_timeline],
    )

    fine = [
        {
            "cycle": record.cycle,
            "reused_previous": record.reused_previous,
            "uavs": [
                {
                    "uav_id": uid,
                    "t": path.times.tolist(),
                    "positions": path.positions.tolist(),
                    "iterations": path.iterations,
                    "terms": record.smoother_terms[uid],
                }
                for uid, path in paths.items()
            ],
        }
        for record, paths in zip(report.cycles, report.fine_paths)
    ]
    with open(out / "fine_paths.json", "w") as f:
        json.dump(fine, f)

    logger.info(f"Wrote run report to {out}")
    return out
