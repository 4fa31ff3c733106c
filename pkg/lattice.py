"""
Actor-centered spherical viewpoint lattice
Discretizes (yaw, tilt, radius) around the actor, converts lattice states to
world camera poses and builds the neighbor graph used by the planner.
"""

import math
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Tuple, Union

import numpy as np

from errors import ConfigurationError, DegeneratePoseError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

# Relative tolerance used when breaking distance ties in nearest_state
TIE_TOLERANCE = 1e-9


def normalize_angle(angle: float) -> float:
    """Wrap an angle into [0, 2π)"""
    wrapped = math.fmod(angle, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    # fmod of a tiny negative number can land exactly on 2π
    return 0.0 if wrapped >= TWO_PI else wrapped


@dataclass(frozen=True)
class LatticeSpec:
    """Discretization of the actor-centered half-sphere"""
    n_theta: int = 16
    n_phi: int = 6
    rho_values: Tuple[float, ...] = (2.0, 3.0, 4.0, 5.0, 6.0, 7.0)
    horizon_steps: int = 5
    step_dt: float = 2.0
    include_pole: bool = False

    def __post_init__(self):
        object.__setattr__(self, "rho_values", tuple(float(r) for r in self.rho_values))
        if self.n_theta < 2:
            raise ConfigurationError(f"LatticeSpec: n_theta must be >= 2, got {self.n_theta}")
        if self.n_phi < 1:
            raise ConfigurationError(f"LatticeSpec: n_phi must be >= 1, got {self.n_phi}")
        if self.include_pole and self.n_phi < 2:
            raise ConfigurationError("LatticeSpec: include_pole requires n_phi >= 2")
        if len(self.rho_values) < 1:
            raise ConfigurationError("LatticeSpec: rho_values must not be empty")
        if any(r <= 0.0 for r in self.rho_values):
            raise ConfigurationError(f"LatticeSpec: rho_values must be positive, got {self.rho_values}")
        if any(b <= a for a, b in zip(self.rho_values, self.rho_values[1:])):
            raise ConfigurationError(f"LatticeSpec: rho_values must be strictly increasing, got {self.rho_values}")
        if self.horizon_steps < 1:
            raise ConfigurationError(f"LatticeSpec: horizon_steps must be >= 1, got {self.horizon_steps}")
        if not self.step_dt > 0.0:
            raise ConfigurationError(f"LatticeSpec: step_dt must be positive, got {self.step_dt}")

    @classmethod
    def uniform(
        cls,
        n_theta: int,
        n_phi: int,
        n_rho: int,
        rho_min: float = 2.0,
        rho_spacing: float = 1.0,
        **kwargs,
    ) -> "LatticeSpec":
        """Spec with `n_rho` equally spaced radii starting at `rho_min`"""
        if n_rho < 1:
            raise ConfigurationError(f"LatticeSpec: n_rho must be >= 1, got {n_rho}")
        rho_values = tuple(rho_min + k * rho_spacing for k in range(n_rho))
        return cls(n_theta=n_theta, n_phi=n_phi, rho_values=rho_values, **kwargs)

    @property
    def n_rho(self) -> int:
        return len(self.rho_values)

    @property
    def size(self) -> int:
        """Total number of lattice positions |S|"""
        return self.n_theta * self.n_phi * self.n_rho

    @property
    def horizon(self) -> float:
        """Planning horizon in seconds"""
        return self.horizon_steps * self.step_dt

    @property
    def computed_states(self) -> int:
        return self.size * self.horizon_steps

    @cached_property
    def theta_values(self) -> np.ndarray:
        return np.arange(self.n_theta) * (TWO_PI / self.n_theta)

    @cached_property
    def phi_values(self) -> np.ndarray:
        half_pi = math.pi / 2.0
        if self.include_pole:
            return np.arange(self.n_phi) * (half_pi / (self.n_phi - 1))
        # (0, π/2]: the last bin sits on the horizon through the actor
        return np.arange(1, self.n_phi + 1) * (half_pi / self.n_phi)

    @property
    def phi_step(self) -> float:
        if self.include_pole:
            return (math.pi / 2.0) / (self.n_phi - 1)
        return (math.pi / 2.0) / self.n_phi

    def linear(self, idx: Union["SphericalIndex", int]) -> int:
        """Linearized index (i_theta·n_phi + i_phi)·n_rho + i_rho"""
        if isinstance(idx, SphericalIndex):
            self.check(idx)
            return (idx.i_theta * self.n_phi + idx.i_phi) * self.n_rho + idx.i_rho
        state = int(idx)
        if not 0 <= state < self.size:
            raise ConfigurationError(f"state {state} outside lattice of size {self.size}")
        return state

    def unravel(self, state: int) -> "SphericalIndex":
        state = self.linear(state)
        i_theta, rest = divmod(state, self.n_phi * self.n_rho)
        i_phi, i_rho = divmod(rest, self.n_rho)
        return SphericalIndex(i_theta, i_phi, i_rho)

    def check(self, idx: "SphericalIndex") -> None:
        if not (0 <= idx.i_theta < self.n_theta and 0 <= idx.i_phi < self.n_phi and 0 <= idx.i_rho < self.n_rho):
            raise ConfigurationError(f"{idx} outside lattice ({self.n_theta}, {self.n_phi}, {self.n_rho})")

    def canonical_offsets(self) -> np.ndarray:
        """(|S|, 3) camera offsets for an actor at the origin with heading 0"""
        theta, phi, rho = np.meshgrid(self.theta_values, self.phi_values, np.asarray(self.rho_values), indexing="ij")
        sin_phi = np.sin(phi)
        offsets = np.stack(
            [rho * np.cos(theta) * sin_phi, rho * np.sin(theta) * sin_phi, rho * np.cos(phi)],
            axis=-1,
        )
        return offsets.reshape(-1, 3)

    def world_positions(self, actor: "ActorPose") -> np.ndarray:
        """(|S|, 3) world camera positions for every state around `actor`"""
        theta, phi, rho = np.meshgrid(
            self.theta_values + actor.heading, self.phi_values, np.asarray(self.rho_values), indexing="ij"
        )
        sin_phi = np.sin(phi)
        offsets = np.stack(
            [rho * np.cos(theta) * sin_phi, rho * np.sin(theta) * sin_phi, rho * np.cos(phi)],
            axis=-1,
        ).reshape(-1, 3)
        return offsets + actor.position


@dataclass(frozen=True)
class SphericalIndex:
    i_theta: int
    i_phi: int
    i_rho: int


@dataclass(frozen=True)
class ActorPose:
    x: float
    y: float
    z: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_angle(float(self.heading)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class CameraPose:
    x: float
    y: float
    z: float
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def facing(cls, position: Sequence[float], target: Sequence[float]) -> "CameraPose":
        """Pose at `position` with yaw pointing at `target` in the horizontal plane"""
        x, y, z = (float(v) for v in position)
        yaw = math.atan2(float(target[1]) - y, float(target[0]) - x)
        return cls(x, y, z, yaw)


@dataclass
class Lattice:
    """Immutable lattice with precomputed offsets and neighbor graph"""
    spec: LatticeSpec
    unit_offsets: np.ndarray = field(repr=False)
    neighbor_table: np.ndarray = field(repr=False)
    neighbor_lists: Tuple[np.ndarray, ...] = field(repr=False)
    i_theta: np.ndarray = field(repr=False)
    i_phi: np.ndarray = field(repr=False)
    i_rho: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.spec.size

    def world_positions(self, actor: ActorPose) -> np.ndarray:
        return self.spec.world_positions(actor)

    def is_neighbor(self, a: int, b: int) -> bool:
        return bool(np.any(self.neighbor_lists[a] == b))

    @cached_property
    def rho(self) -> np.ndarray:
        return np.asarray(self.spec.rho_values)[self.i_rho]

    @cached_property
    def phi(self) -> np.ndarray:
        return self.spec.phi_values[self.i_phi]

    @cached_property
    def theta(self) -> np.ndarray:
        return self.spec.theta_values[self.i_theta]

    @cached_property
    def cell_volumes(self) -> np.ndarray:
        """Spherical volume element ρ²·sinφ·Δρ·Δθ·Δφ per state"""
        rho_values = np.asarray(self.spec.rho_values)
        d_rho = np.gradient(rho_values) if len(rho_values) > 1 else np.ones(1)
        d_theta = TWO_PI / self.spec.n_theta
        return self.rho ** 2 * np.sin(self.phi) * d_rho[self.i_rho] * d_theta * self.spec.phi_step


def build_lattice(spec: LatticeSpec) -> Lattice:
    """Build the lattice: offsets plus the 3x3x3 neighbor graph (θ wraps, φ/ρ clamp)"""
    i_theta, i_phi, i_rho = np.meshgrid(
        np.arange(spec.n_theta), np.arange(spec.n_phi), np.arange(spec.n_rho), indexing="ij"
    )
    i_theta, i_phi, i_rho = i_theta.ravel(), i_phi.ravel(), i_rho.ravel()

    columns = []
    for d_theta in (-1, 0, 1):
        for d_phi in (-1, 0, 1):
            for d_rho in (-1, 0, 1):
                nt = (i_theta + d_theta) % spec.n_theta
                nphi = np.clip(i_phi + d_phi, 0, spec.n_phi - 1)
                nrho = np.clip(i_rho + d_rho, 0, spec.n_rho - 1)
                columns.append((nt * spec.n_phi + nphi) * spec.n_rho + nrho)
    # Duplicates from clamping are kept here; they do not change a min over neighbors
    neighbor_table = np.stack(columns, axis=1)
    neighbor_lists = tuple(np.unique(row) for row in neighbor_table)

    lattice = Lattice(
        spec=spec,
        unit_offsets=spec.canonical_offsets(),
        neighbor_table=neighbor_table,
        neighbor_lists=neighbor_lists,
        i_theta=i_theta,
        i_phi=i_phi,
        i_rho=i_rho,
    )
    logger.debug(f"Built lattice ({spec.n_theta}, {spec.n_phi}, {spec.n_rho}) with {spec.size} states")
    return lattice


def to_world(idx: Union[SphericalIndex, int], actor: ActorPose, spec: LatticeSpec) -> CameraPose:
    """Camera pose for lattice state `idx` around `actor`, yawed toward the actor"""
    s = spec.unravel(spec.linear(idx))
    theta = spec.theta_values[s.i_theta] + actor.heading
    phi = spec.phi_values[s.i_phi]
    rho = spec.rho_values[s.i_rho]
    position = (
        actor.x + rho * math.cos(theta) * math.sin(phi),
        actor.y + rho * math.sin(theta) * math.sin(phi),
        actor.z + rho * math.cos(phi),
    )
    return CameraPose.facing(position, (actor.x, actor.y))


def nearest_state(pose: CameraPose, actor: ActorPose, spec: LatticeSpec) -> SphericalIndex:
    """Lattice state closest to `pose`; ties go to the lowest linear index"""
    offset = pose.position - actor.position
    if float(np.linalg.norm(offset)) < 1e-12:
        raise DegeneratePoseError("camera pose coincides with the actor position", module="lattice")

    positions = spec.world_positions(actor)
    distances = np.linalg.norm(positions - pose.position, axis=1)
    best = float(distances.min())
    tolerance = TIE_TOLERANCE * max(1.0, best, float(spec.rho_values[-1]))
    # np.flatnonzero is ascending, so the first candidate has the lowest index
    state = int(np.flatnonzero(distances <= best + tolerance)[0])
    return spec.unravel(state)
