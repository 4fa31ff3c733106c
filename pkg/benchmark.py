"""
Planner scaling benchmark
Times plan_greedy on a fixed randomized world for every (lattice, UAV count,
horizon) combination of a sweep and reports rows with the state-space,
computed-states, planning-time, CPU and table-memory columns.
"""

import csv
import math
import time
import logging
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from config import settings
from costmodel import CinePrior, CostModel, DiversityParams, PairTables, Weights, build_pair_tables
from errors import ConfigurationError
from lattice import ActorPose, Lattice, LatticeSpec, build_lattice
from planner import plan_greedy
from world import Box, SceneDescription, VoxelGrid, spherical_regrid, voxelize

logger = logging.getLogger(__name__)

BENCH_COLUMNS = (
    "state_space",
    "n_uavs",
    "horizon_steps",
    "computed_states",
    "mean_ms",
    "std_ms",
    "min_ms",
    "cpu_percent",
    "table_bytes",
    "status",
)

# The eight discretizations of the published scaling table
TABLE_SPECS: Tuple[Tuple[int, int, int], ...] = (
    (3, 3, 8),
    (16, 6, 6),
    (24, 9, 9),
    (32, 12, 12),
    (40, 15, 15),
    (48, 18, 18),
    (52, 21, 21),
    (64, 24, 24),
)


@dataclass
class Sweep:
    specs: List[LatticeSpec]
    n_uavs: List[int] = field(default_factory=lambda: [3])
    horizon_steps: List[int] = field(default_factory=lambda: [5])
    repetitions: int = settings.bench_repetitions
    batch: int = 1
    seed: int = 0
    max_table_bytes: int = settings.max_table_bytes
    n_obstacles: int = 20
    extent: float = 15.0
    resolution: float = 0.5
    weights: Weights = field(default_factory=Weights)
    diversity: DiversityParams = field(default_factory=DiversityParams)
    fov_half_angle: float = math.radians(50.0)
    r_max: float = 1.0


@dataclass
class BenchRow:
    state_space: str
    n_uavs: int
    horizon_steps: int
    computed_states: int
    mean_ms: Optional[float]
    std_ms: Optional[float]
    min_ms: Optional[float]
    cpu_percent: Optional[float]
    table_bytes: int
    status: str = "ok"


def random_world(n_obstacles: int, extent: float, resolution: float, seed: int) -> VoxelGrid:
    """Boxes scattered over a square of half-width `extent`, leaving the center free for the actor"""
    rng = np.random.default_rng(seed)
    boxes = []
    while len(boxes) < n_obstacles:
        center = rng.uniform(-extent, extent, size=2)
        if np.linalg.norm(center) < 3.0:
            continue
        half = rng.uniform(0.25, 1.0, size=2)
        height = rng.uniform(1.0, 6.0)
        boxes.append(Box(
            min=(center[0] - half[0], center[1] - half[1], 0.0),
            max=(center[0] + half[0], center[1] + half[1], height),
        ))
    scene = SceneDescription(bounds_min=(-extent, -extent, 0.0), bounds_max=(extent, extent, 10.0), boxes=boxes)
    return voxelize(scene, resolution)


def actor_walk(steps: int, step_dt: float, seed: int) -> List[ActorPose]:
    """Actor walking in a straight line through the origin at 1 m/s"""
    rng = np.random.default_rng(seed)
    heading = float(rng.uniform(0.0, 2.0 * math.pi))
    direction = np.array([math.cos(heading), math.sin(heading)])
    return [
        ActorPose(*(direction * k * step_dt), 1.0, heading=heading)
        for k in range(steps)
    ]


def time_plan(model: CostModel, starts: Sequence[int], repetitions: int, batch: int = 1) -> Tuple[float, float, float, float]:
    """(mean_ms, std_ms, min_ms, cpu_percent) per plan_greedy call.

    Each repetition times `batch` back-to-back plans and divides; one untimed
    warm-up run fills the model caches.
    """
    plan_greedy(starts, model)
    wall, cpu = [], []
    for _ in range(repetitions):
        wall_start, cpu_start = time.perf_counter(), time.process_time()
        for _ in range(batch):
            plan_greedy(starts, model)
        wall.append((time.perf_counter() - wall_start) * 1000.0 / batch)
        cpu.append((time.process_time() - cpu_start) * 1000.0 / batch)
    mean_ms = statistics.mean(wall)
    std_ms = statistics.stdev(wall) if len(wall) > 1 else 0.0
    cpu_percent = 100.0 * sum(cpu) / sum(wall) if sum(wall) > 0.0 else 0.0
    return mean_ms, std_ms, min(wall), cpu_percent


def state_space_label(spec: LatticeSpec) -> str:
    return f"({spec.n_theta},{spec.n_phi},{spec.n_rho})"


def benchmark(sweep: Sweep, progress: bool = False) -> List[BenchRow]:
    """Run every configuration of the sweep; oversized pair tables are reported but not built"""
    if not sweep.specs:
        raise ConfigurationError("benchmark sweep has no lattice specs", module="benchmark")
    if sweep.repetitions < 1 or sweep.batch < 1:
        raise ConfigurationError("benchmark repetitions and batch must be >= 1", module="benchmark")
    grid = random_world(sweep.n_obstacles, sweep.extent, sweep.resolution, sweep.seed)
    configs = [(spec, T, n) for spec in sweep.specs for T in sweep.horizon_steps for n in sweep.n_uavs]

    lattices: Dict[LatticeSpec, Tuple[Lattice, PairTables, CinePrior]] = {}
    rows = []
    for spec, T, n in tqdm(configs, desc="Benchmarking", disable=not progress):
        spec_T = LatticeSpec(spec.n_theta, spec.n_phi, spec.rho_values, T, spec.step_dt, spec.include_pole)
        table_bytes = PairTables.estimate_bytes(spec.size)
        row = BenchRow(
            state_space=state_space_label(spec),
            n_uavs=n,
            horizon_steps=T,
            computed_states=spec_T.computed_states,
            mean_ms=None,
            std_ms=None,
            min_ms=None,
            cpu_percent=None,
            table_bytes=table_bytes,
        )
        if table_bytes > sweep.max_table_bytes:
            row.status = f"skipped: tables need {table_bytes / 1024 ** 2:.0f} MB"
            logger.warning(f"{row.state_space}: {row.status} (limit {sweep.max_table_bytes / 1024 ** 2:.0f} MB)")
            rows.append(row)
            continue

        key = LatticeSpec(spec.n_theta, spec.n_phi, spec.rho_values, 1, spec.step_dt, spec.include_pole)
        if key not in lattices:
            lattice = build_lattice(key)
            lattices[key] = (
                lattice,
                build_pair_tables(lattice, sweep.diversity, sweep.fov_half_angle),
                CinePrior.zeros(lattice),
            )
        lattice, tables, prior = lattices[key]

        sgrid = spherical_regrid(grid, actor_walk(T, spec.step_dt, sweep.seed), lattice)
        model = CostModel(lattice, tables, sgrid, prior, sweep.weights, sweep.r_max)
        rng = np.random.default_rng(sweep.seed)
        starts = [int(s) for s in rng.integers(0, lattice.size, size=n)]
        row.mean_ms, row.std_ms, row.min_ms, row.cpu_percent = time_plan(model, starts, sweep.repetitions, sweep.batch)
        row.table_bytes = tables.nbytes
        logger.debug(f"{row.state_space} n={n} T={T}: {row.mean_ms:.3f} ± {row.std_ms:.3f} ms")
        rows.append(row)

    logger.info(f"Benchmarked {len(rows)} configurations")
    return rows


def write_rows(rows: Sequence[BenchRow], out_csv: str) -> Path:
    path = Path(out_csv)
    path.parent.mkdir(parents=True, exist_ok=True)

    def fmt(value):
        if value is None:
            return ""
        return f"{value:.4f}" if isinstance(value, float) else value

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(BENCH_COLUMNS)
        for row in rows:
            record = asdict(row)
            w.writerow([fmt(record[c]) for c in BENCH_COLUMNS])
    logger.info(f"Wrote {len(rows)} benchmark rows to {path}")
    return path


def linear_fit(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float, float]:
    """Least-squares line y = a·x + b and its coefficient of determination R²"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a, b = np.polyfit(x, y, 1)
    residual = y - (a * x + b)
    total = y - y.mean()
    ss_tot = float(np.dot(total, total))
    r2 = 1.0 - float(np.dot(residual, residual)) / ss_tot if ss_tot > 0.0 else 1.0
    return float(a), float(b), r2
