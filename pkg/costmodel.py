"""
Cost model on the viewpoint lattice
Occlusion, obstacle, cinematography prior, shot diversity, inter-drone
collision and inter-drone visibility costs, with the |S|x|S| pair tables
precomputed in the actor-centered frame.
"""

import math
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from errors import ConfigurationError, DegeneratePoseError, NumericError
from lattice import Lattice, SphericalIndex
from world import SphericalGrid

logger = logging.getLogger(__name__)

TERMS = ("occ", "obs", "cine", "div", "col", "vis")

# Row block size (entries) when filling pair tables
_TABLE_BLOCK_ENTRIES = 4_000_000


@dataclass(frozen=True)
class Weights:
    """Relative weights of the cost terms"""
    lambda_occ: float = 1.0
    lambda_obs: float = 1.0
    lambda_div: float = 1.0
    lambda_vis: float = 1.0
    lambda_cine: float = 1.0
    lambda_col: float = 1.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not math.isfinite(value) or value < 0.0:
                raise ConfigurationError(f"Weights: {name} must be finite and non-negative, got {value}")

    def scaled(self, factor: float) -> "Weights":
        return Weights(**{name: value * factor for name, value in self.__dict__.items()})

    @property
    def has_pairwise(self) -> bool:
        return self.lambda_div > 0.0 or self.lambda_col > 0.0 or self.lambda_vis > 0.0


@dataclass(frozen=True)
class DiversityParams:
    """Distance ramps for shot diversity and inter-drone collision"""
    d_min_div: float = 1.0
    d_max_div: float = 6.0
    d_min_col: float = 0.5
    d_max_col: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.d_min_div < self.d_max_div:
            raise ConfigurationError(
                f"DiversityParams: need 0 <= d_min_div < d_max_div, got {self.d_min_div}, {self.d_max_div}"
            )
        if not 0.0 <= self.d_min_col < self.d_max_col:
            raise ConfigurationError(
                f"DiversityParams: need 0 <= d_min_col < d_max_col, got {self.d_min_col}, {self.d_max_col}"
            )


def _distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Written out per component so tables and direct calls round identically
    d = a - b
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


def _ramp(d: np.ndarray, d_min: float, d_max: float) -> np.ndarray:
    """1 below d_min, linear down to 0 at d_max, 0 beyond"""
    return np.clip((d_max - d) / (d_max - d_min), 0.0, 1.0)


def _visible(p_i: np.ndarray, p_j: np.ndarray, actor: np.ndarray, cos_fov: float) -> np.ndarray:
    v = p_j - p_i
    a = actor - p_i
    dot = v[..., 0] * a[..., 0] + v[..., 1] * a[..., 1] + v[..., 2] * a[..., 2]
    norm_v = np.sqrt(v[..., 0] * v[..., 0] + v[..., 1] * v[..., 1] + v[..., 2] * v[..., 2])
    norm_a = np.sqrt(a[..., 0] * a[..., 0] + a[..., 1] * a[..., 1] + a[..., 2] * a[..., 2])
    # A coincident camera sits on the cone axis
    return (norm_v == 0.0) | (dot >= cos_fov * norm_v * norm_a)


def diversity_pair(p1, p2, params: DiversityParams) -> float:
    d = _distance(np.asarray(p1, dtype=float), np.asarray(p2, dtype=float))
    return float(_ramp(d, params.d_min_div, params.d_max_div))


def collision_pair(p1, p2, params: DiversityParams) -> float:
    d = _distance(np.asarray(p1, dtype=float), np.asarray(p2, dtype=float))
    return float(_ramp(d, params.d_min_col, params.d_max_col))


def visibility_pair(p_i, p_j, actor, fov_half_angle: float) -> int:
    """1 if p_j lies inside the cone from p_i toward the actor"""
    p_i = np.asarray(p_i, dtype=float)
    actor = np.asarray(actor, dtype=float)
    if float(_distance(p_i, actor)) == 0.0:
        raise DegeneratePoseError("visibility cone undefined for a camera at the actor position", module="costmodel")
    return int(_visible(p_i, np.asarray(p_j, dtype=float), actor, math.cos(fov_half_angle)))


@dataclass
class PairTables:
    """Pairwise lookups over the canonical lattice offsets (actor at origin, heading 0)"""
    visibility: np.ndarray = field(repr=False)
    diversity: np.ndarray = field(repr=False)
    collision: np.ndarray = field(repr=False)
    fov_half_angle: float
    params: DiversityParams

    @property
    def size(self) -> int:
        return self.visibility.shape[0]

    @property
    def entries(self) -> int:
        return self.visibility.size

    @property
    def nbytes(self) -> int:
        return self.visibility.nbytes + self.diversity.nbytes + self.collision.nbytes

    @staticmethod
    def estimate_bytes(n_states: int) -> int:
        """Footprint of the three tables for |S| = n_states (bool + two float64)"""
        return n_states * n_states * (1 + 8 + 8)


def build_pair_tables(lattice: Lattice, params: DiversityParams, fov_half_angle: float) -> PairTables:
    """Fill the visibility, diversity and collision tables"""
    if not 0.0 < fov_half_angle <= math.pi:
        raise ConfigurationError(f"fov_half_angle must lie in (0, π], got {fov_half_angle}")
    offsets = lattice.unit_offsets
    S = len(offsets)
    if np.any(_distance(offsets, np.zeros(3)) == 0.0):
        raise DegeneratePoseError("lattice contains a state at the actor position", module="costmodel")

    cos_fov = math.cos(fov_half_angle)
    origin = np.zeros(3)
    visibility = np.empty((S, S), dtype=bool)
    diversity = np.empty((S, S), dtype=float)
    collision = np.empty((S, S), dtype=float)

    block = max(1, _TABLE_BLOCK_ENTRIES // max(S, 1))
    for start in range(0, S, block):
        stop = min(start + block, S)
        rows = offsets[start:stop, None, :]
        cols = offsets[None, :, :]
        visibility[start:stop] = _visible(rows, cols, origin, cos_fov)
        d = _distance(rows, cols)
        diversity[start:stop] = _ramp(d, params.d_min_div, params.d_max_div)
        collision[start:stop] = _ramp(d, params.d_min_col, params.d_max_col)

    tables = PairTables(visibility, diversity, collision, fov_half_angle, params)
    logger.info(f"Built pair tables for {S} states ({tables.nbytes / 1024 ** 2:.1f} MB)")
    return tables


@dataclass(frozen=True)
class CineRule:
    """Adds `cost` to states inside all given ranges (None = unrestricted).

    theta is measured from the actor heading; a range with lo > hi wraps
    through 2π.
    """
    cost: float
    theta_range: Optional[Tuple[float, float]] = None
    phi_range: Optional[Tuple[float, float]] = None
    rho_range: Optional[Tuple[float, float]] = None


PRIOR_PRESETS = {
    # tilt within 30° of vertical
    "overhead": lambda cost: CineRule(cost=cost, phi_range=(0.0, math.pi / 6.0 + 1e-9)),
    # tilt within 15° of the horizon through the actor
    "low_angle": lambda cost: CineRule(cost=cost, phi_range=(math.pi / 2.0 - math.pi / 12.0 - 1e-9, math.pi / 2.0)),
}


@dataclass
class CinePrior:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0.0):
            raise ConfigurationError("CinePrior: values must be finite and non-negative")

    def __getitem__(self, state: int) -> float:
        return float(self.values[state])

    @classmethod
    def zeros(cls, lattice: Lattice) -> "CinePrior":
        return cls(np.zeros(lattice.size))

    @classmethod
    def from_rules(
        cls,
        lattice: Lattice,
        rules: Sequence[CineRule] = (),
        preset: Optional[str] = None,
        preset_cost: float = 1.0,
    ) -> "CinePrior":
        rules = list(rules)
        if preset is not None:
            if preset not in PRIOR_PRESETS:
                raise ConfigurationError(f"CinePrior: unknown preset '{preset}' (known: {sorted(PRIOR_PRESETS)})")
            rules.append(PRIOR_PRESETS[preset](preset_cost))

        values = np.zeros(lattice.size)
        for rule in rules:
            if not math.isfinite(rule.cost) or rule.cost < 0.0:
                raise ConfigurationError(f"CinePrior: rule cost must be non-negative, got {rule.cost}")
            mask = np.ones(lattice.size, dtype=bool)
            if rule.theta_range is not None:
                lo, hi = rule.theta_range
                if lo <= hi:
                    mask &= (lattice.theta >= lo) & (lattice.theta <= hi)
                else:
                    mask &= (lattice.theta >= lo) | (lattice.theta <= hi)
            if rule.phi_range is not None:
                mask &= (lattice.phi >= rule.phi_range[0]) & (lattice.phi <= rule.phi_range[1])
            if rule.rho_range is not None:
                mask &= (lattice.rho >= rule.rho_range[0]) & (lattice.rho <= rule.rho_range[1])
            values[mask] += rule.cost
        logger.debug(f"Cine prior from {len(rules)} rules, {int((values > 0).sum())} penalized states")
        return cls(values)


def _state(lattice: Lattice, state: Union[SphericalIndex, int]) -> int:
    return lattice.spec.linear(state)


def obstacle_cost(state, t: int, sgrid: SphericalGrid, r_max: float) -> float:
    """Volume-weighted occupancy of the lattice cells within r_max of the state"""
    s = _state(sgrid.lattice, state)
    positions = sgrid.positions[t]
    near = _distance(positions, positions[s]) <= r_max
    return float(np.sum(sgrid.occupancy[t, near] * sgrid.lattice.cell_volumes[near]))


def occlusion_cost(state, t: int, sgrid: SphericalGrid) -> float:
    """Arc-length-weighted occupancy along the sight line to the actor"""
    s = _state(sgrid.lattice, state)
    return float(np.sum(sgrid.ray_occupancy[t, s] * sgrid.ray_weights[s]))


def _fixed_states(fixed_paths, t: int, uav_index: Optional[int] = None) -> List[int]:
    states = []
    for path in fixed_paths:
        if uav_index is not None and getattr(path, "uav_id", None) == uav_index:
            continue
        states.append(int(path.states[t]))
    return states


def cost_terms(
    state,
    t: int,
    uav_index: Optional[int],
    fixed_paths,
    tables: PairTables,
    sgrid: SphericalGrid,
    prior: CinePrior,
    weights: Weights,
    r_max: float = 1.0,
) -> Dict[str, float]:
    """Weighted per-term cost of one (state, timestep), computed without cost maps"""
    s = _state(sgrid.lattice, state)
    terms = {
        "occ": weights.lambda_occ * occlusion_cost(s, t, sgrid),
        "obs": weights.lambda_obs * obstacle_cost(s, t, sgrid, r_max),
        "cine": weights.lambda_cine * prior[s],
        "div": 0.0,
        "col": 0.0,
        "vis": 0.0,
    }
    for other in _fixed_states(fixed_paths, t, uav_index):
        terms["div"] += weights.lambda_div * float(tables.diversity[s, other])
        terms["col"] += weights.lambda_col * float(tables.collision[s, other])
        terms["vis"] += weights.lambda_vis * float(int(tables.visibility[s, other]) + int(tables.visibility[other, s]))
    return terms


def state_cost(
    state,
    t: int,
    uav_index: Optional[int],
    fixed_paths,
    tables: PairTables,
    sgrid: SphericalGrid,
    prior: CinePrior,
    weights: Weights,
    r_max: float = 1.0,
) -> float:
    terms = cost_terms(state, t, uav_index, fixed_paths, tables, sgrid, prior, weights, r_max)
    return sum(terms[name] for name in TERMS)


def build_obstacle_kernel(lattice: Lattice, r_max: float) -> sparse.csr_matrix:
    """Sparse (|S|, |S|) matrix: row s weights the cells within r_max of s by volume"""
    if not r_max >= 0.0:
        raise ConfigurationError(f"r_max must be non-negative, got {r_max}")
    tree = cKDTree(lattice.unit_offsets)
    pairs = tree.query_pairs(r_max, output_type="ndarray")
    rows = np.concatenate([np.arange(lattice.size), pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([np.arange(lattice.size), pairs[:, 1], pairs[:, 0]])
    data = lattice.cell_volumes[cols]
    return sparse.csr_matrix((data, (rows, cols)), shape=(lattice.size, lattice.size))


@dataclass
class CostMap:
    """values[t, s]: instantaneous cost of state s at timestep t"""
    values: np.ndarray

    @property
    def horizon_steps(self) -> int:
        return self.values.shape[0]


@dataclass
class CostModel:
    """Everything the planner needs to fill cost maps for one planning cycle"""
    lattice: Lattice
    tables: PairTables
    sgrid: SphericalGrid
    prior: CinePrior
    weights: Weights
    r_max: float = 1.0
    obstacle_kernel: Optional[sparse.csr_matrix] = field(default=None, repr=False)

    def __post_init__(self):
        if self.tables.size != self.lattice.size:
            raise ConfigurationError("pair tables do not match the lattice size")
        if self.obstacle_kernel is None:
            self.obstacle_kernel = build_obstacle_kernel(self.lattice, self.r_max)

    @property
    def horizon_steps(self) -> int:
        return self.sgrid.horizon_steps

    @cached_property
    def occlusion(self) -> np.ndarray:
        return self.sgrid.occlusion()

    @cached_property
    def obstacle(self) -> np.ndarray:
        return np.asarray(self.obstacle_kernel @ self.sgrid.occupancy.T).T

    @cached_property
    def unary(self) -> np.ndarray:
        """(T, |S|) state-only cost: λ_occ·occ + λ_obs·obs + λ_cine·prior"""
        w = self.weights
        values = w.lambda_occ * self.occlusion + w.lambda_obs * self.obstacle + w.lambda_cine * self.prior.values
        if not np.all(np.isfinite(values)):
            raise NumericError("non-finite state cost", module="costmodel")
        return values

    @cached_property
    def pairwise(self) -> np.ndarray:
        """(|S|, |S|) symmetric cost of two cameras occupying states (s, s')"""
        w = self.weights
        vis = self.tables.visibility.astype(float)
        return w.lambda_div * self.tables.diversity + w.lambda_col * self.tables.collision + w.lambda_vis * (vis + vis.T)

    def pairwise_accumulator(self) -> np.ndarray:
        return np.zeros((self.horizon_steps, self.lattice.size))

    def add_fixed(self, accumulator: np.ndarray, path) -> None:
        """Fold one fixed path's pairwise costs into the (T, |S|) accumulator in place"""
        if not self.weights.has_pairwise:
            return
        for t, s in enumerate(path.states):
            accumulator[t] += self.pairwise[:, int(s)]

    def costmap(self, fixed_paths: Sequence = ()) -> CostMap:
        """Full recomputation for the given fixed set (same summation order as the incremental path)"""
        accumulator = self.pairwise_accumulator()
        for path in fixed_paths:
            self.add_fixed(accumulator, path)
        return CostMap(self.unary + accumulator)

    def terms(self, state, t: int, fixed_paths: Sequence = ()) -> Dict[str, float]:
        return cost_terms(
            state, t, None, fixed_paths, self.tables, self.sgrid, self.prior, self.weights, self.r_max
        )

    def joint_cost(self, paths: Sequence) -> float:
        """J over a set of paths: unary terms plus each unordered pair once"""
        total = 0.0
        for i, path in enumerate(paths):
            states = np.asarray(path.states)
            total += float(self.unary[np.arange(len(states)), states].sum())
            for other in paths[:i]:
                total += float(self.pairwise[states, np.asarray(other.states)].sum())
        return total
