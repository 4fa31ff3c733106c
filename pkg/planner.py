"""
Centralized greedy multi-camera planner
Per-UAV backward induction over the lattice x time graph, fixing each planned
path before the next UAV is planned, plus an exhaustive joint-optimal planner
for small instances.
"""

import time
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from config import settings
from costmodel import TERMS, CostMap, CostModel
from errors import ConfigurationError, NumericError, SizeLimitError
from lattice import ActorPose, Lattice, SphericalIndex

logger = logging.getLogger(__name__)


@dataclass
class ValueMap:
    """values[t, s]: minimum cost-to-go from state s at timestep t"""
    values: np.ndarray


@dataclass(frozen=True)
class WaypointPath:
    """Coarse lattice path: one linear state index per planning timestep"""
    uav_id: int
    states: tuple

    def __len__(self) -> int:
        return len(self.states)

    def indices(self, lattice: Lattice) -> List[SphericalIndex]:
        return [lattice.spec.unravel(s) for s in self.states]


@dataclass
class PlanResult:
    paths: List[WaypointPath]
    costs: List[float]
    duration: float
    actor_stamp: List[ActorPose] = field(default_factory=list)
    cost_maps: List[CostMap] = field(default_factory=list, repr=False)
    value_maps: List[ValueMap] = field(default_factory=list, repr=False)

    @property
    def total_cost(self) -> float:
        return float(sum(self.costs))

    def path_for(self, uav_id: int) -> WaypointPath:
        for path in self.paths:
            if path.uav_id == uav_id:
                return path
        raise KeyError(uav_id)

    def to_dict(self, model: CostModel) -> Dict[str, Any]:
        """Per UAV, per timestep: lattice index, world position and weighted cost terms"""
        spec = model.lattice.spec
        uavs = []
        for order, path in enumerate(self.paths):
            fixed = self.paths[:order]
            steps = []
            for t, (s, idx) in enumerate(zip(path.states, path.indices(model.lattice))):
                terms = model.terms(s, t, fixed)
                steps.append({
                    "t": t * spec.step_dt,
                    "state": int(s),
                    "index": [idx.i_theta, idx.i_phi, idx.i_rho],
                    "position": [float(v) for v in model.sgrid.positions[t, s]],
                    "cost": sum(terms[name] for name in TERMS),
                    "terms": terms,
                })
            uavs.append({
                "uav_id": path.uav_id,
                "planning_order": order,
                "greedy_cost": self.costs[order],
                "waypoints": steps,
            })
        return {
            "lattice": [spec.n_theta, spec.n_phi, spec.n_rho],
            "horizon_steps": spec.horizon_steps,
            "step_dt": spec.step_dt,
            "total_cost": self.total_cost,
            "planning_ms": self.duration * 1000.0,
            "uavs": uavs,
        }


def backward_induction(costmap: CostMap, lattice: Lattice) -> ValueMap:
    """Single backward pass: V(s, t) = C(s, t) + min over N(s) of V(s', t+1)"""
    C = costmap.values
    if not np.all(np.isfinite(C)):
        raise NumericError("cost map contains non-finite values", module="planner")
    V = np.empty_like(C)
    V[-1] = C[-1]
    for t in range(C.shape[0] - 2, -1, -1):
        V[t] = C[t] + V[t + 1][lattice.neighbor_table].min(axis=1)
    return ValueMap(V)


def extract_path(valuemap: ValueMap, costmap: CostMap, lattice: Lattice, start: Union[SphericalIndex, int], uav_id: int = 0) -> WaypointPath:
    """Follow the least cost-to-go neighbor from `start`; ties go to the lowest index"""
    V = valuemap.values
    state = lattice.spec.linear(start)
    states = [state]
    for t in range(V.shape[0] - 1):
        neighbors = lattice.neighbor_lists[state]
        # neighbor_lists are sorted, argmin returns the first (lowest) minimum
        state = int(neighbors[int(np.argmin(V[t + 1, neighbors]))])
        states.append(state)
    return WaypointPath(uav_id=uav_id, states=tuple(states))


def path_cost(path: WaypointPath, costmap: CostMap) -> float:
    return float(sum(costmap.values[t, s] for t, s in enumerate(path.states)))


def _normalize_starts(uav_starts: Sequence, lattice: Lattice) -> List[int]:
    if len(uav_starts) < 1:
        raise ConfigurationError("at least one UAV start is required")
    return [lattice.spec.linear(s) for s in uav_starts]


def plan_greedy(
    uav_starts: Sequence[Union[SphericalIndex, int]],
    model: CostModel,
    uav_ids: Optional[Sequence[int]] = None,
) -> PlanResult:
    """Plan UAVs one at a time in input order, each optimal given those already fixed"""
    lattice = model.lattice
    starts = _normalize_starts(uav_starts, lattice)
    uav_ids = list(uav_ids) if uav_ids is not None else list(range(len(starts)))

    began = time.perf_counter()
    accumulator = model.pairwise_accumulator()
    unary = model.unary
    paths, costs, cost_maps, value_maps = [], [], [], []
    for uav_id, start in zip(uav_ids, starts):
        # Pairwise terms are folded in incrementally; same sums as model.costmap(paths)
        costmap = CostMap(unary + accumulator)
        valuemap = backward_induction(costmap, lattice)
        path = extract_path(valuemap, costmap, lattice, start, uav_id)
        paths.append(path)
        costs.append(path_cost(path, costmap))
        cost_maps.append(costmap)
        value_maps.append(valuemap)
        model.add_fixed(accumulator, path)
    duration = time.perf_counter() - began

    logger.debug(f"Greedy plan for {len(paths)} UAVs in {duration * 1000.0:.2f} ms, cost {sum(costs):.4f}")
    return PlanResult(
        paths=paths,
        costs=costs,
        duration=duration,
        actor_stamp=list(model.sgrid.actor_path),
        cost_maps=cost_maps,
        value_maps=value_maps,
    )


def enumerate_paths(lattice: Lattice, start: int, steps: int) -> np.ndarray:
    """(P, steps) array of all neighbor-feasible paths from `start`, in lexicographic order"""
    paths = np.array([[start]], dtype=np.int64)
    for _ in range(steps - 1):
        extended = [
            np.column_stack([np.repeat(row[None, :], len(lattice.neighbor_lists[row[-1]]), axis=0),
                             lattice.neighbor_lists[row[-1]]])
            for row in paths
        ]
        paths = np.concatenate(extended, axis=0)
    return paths


def count_paths(lattice: Lattice, start: int, steps: int) -> int:
    """Number of neighbor-feasible paths of length `steps` from `start`"""
    counts = np.ones(lattice.size, dtype=object)
    for _ in range(steps - 1):
        counts = np.array([sum(counts[n] for n in lattice.neighbor_lists[s]) for s in range(lattice.size)], dtype=object)
    return int(counts[start])


@dataclass(frozen=True)
class ExhaustiveLimits:
    max_joint_paths: int = settings.max_joint_paths


def plan_exhaustive(
    uav_starts: Sequence[Union[SphericalIndex, int]],
    model: CostModel,
    limits: Optional[ExhaustiveLimits] = None,
    uav_ids: Optional[Sequence[int]] = None,
) -> PlanResult:
    """Jointly optimal path tuple by brute force; ties go to the lexicographically smallest tuple"""
    limits = limits or ExhaustiveLimits()
    lattice = model.lattice
    starts = _normalize_starts(uav_starts, lattice)
    uav_ids = list(uav_ids) if uav_ids is not None else list(range(len(starts)))
    T = model.horizon_steps

    joint = 1
    for start in starts:
        joint *= count_paths(lattice, start, T)
    if joint > limits.max_joint_paths:
        raise SizeLimitError(
            f"exhaustive search over {joint} joint paths exceeds limit {limits.max_joint_paths}", module="planner"
        )

    began = time.perf_counter()
    candidates = [enumerate_paths(lattice, start, T) for start in starts]
    steps = np.arange(T)
    unary = [model.unary[steps, c].sum(axis=1) for c in candidates]

    n = len(starts)
    total = np.zeros(tuple(len(c) for c in candidates))
    for i in range(n):
        shape = [1] * n
        shape[i] = len(candidates[i])
        total = total + unary[i].reshape(shape)
        for j in range(i):
            # (P_j, P_i): pairwise cost summed over timesteps
            pair = model.pairwise[candidates[j][:, None, :], candidates[i][None, :, :]].sum(axis=2)
            shape = [1] * n
            shape[j] = len(candidates[j])
            shape[i] = len(candidates[i])
            total = total + pair.reshape(shape)

    # C-order argmin returns the lexicographically first optimum
    best = np.unravel_index(int(np.argmin(total)), total.shape)
    chosen = [candidates[i][best[i]] for i in range(n)]
    paths = [WaypointPath(uav_id=uav_ids[i], states=tuple(int(s) for s in chosen[i])) for i in range(n)]
    costs = []
    for i in range(n):
        cost = float(unary[i][best[i]])
        for j in range(i):
            cost += float(model.pairwise[chosen[j], chosen[i]].sum())
        costs.append(cost)
    duration = time.perf_counter() - began

    logger.info(f"Exhaustive plan over {joint} joint paths in {duration:.3f} s, cost {sum(costs):.4f}")
    return PlanResult(paths=paths, costs=costs, duration=duration, actor_stamp=list(model.sgrid.actor_path))
