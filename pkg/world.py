"""
Obstacle world and scripted actor
Voxelizes scene primitives, computes the signed distance field, regrids
occupancy into the actor-centered spherical domain and interpolates the
actor script.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from errors import ConfigurationError, RangeError
from lattice import ActorPose, Lattice

logger = logging.getLogger(__name__)

# Slack so that primitives touching a cell face do not mark the neighbor cell
_FACE_EPS = 1e-9


@dataclass(frozen=True)
class Box:
    """Axis-aligned box"""
    min: Tuple[float, float, float]
    max: Tuple[float, float, float]


@dataclass(frozen=True)
class Cylinder:
    """Vertical cylinder"""
    center: Tuple[float, float]
    radius: float
    z_min: float
    z_max: float


@dataclass
class SceneDescription:
    bounds_min: Tuple[float, float, float]
    bounds_max: Tuple[float, float, float]
    boxes: List[Box] = field(default_factory=list)
    cylinders: List[Cylinder] = field(default_factory=list)

    def translated(self, offset: Sequence[float]) -> "SceneDescription":
        o = np.asarray(offset, dtype=float)
        shift = lambda p: tuple(float(v) for v in np.asarray(p, dtype=float) + o[: len(p)])
        return SceneDescription(
            bounds_min=shift(self.bounds_min),
            bounds_max=shift(self.bounds_max),
            boxes=[Box(shift(b.min), shift(b.max)) for b in self.boxes],
            cylinders=[
                Cylinder(shift(c.center), c.radius, c.z_min + o[2], c.z_max + o[2]) for c in self.cylinders
            ],
        )


@dataclass
class VoxelGrid:
    """Occupancy grid; cell (i, j, k) spans origin + [i, i+1)·resolution per axis"""
    origin: np.ndarray
    resolution: float
    occupancy: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.occupancy = np.asarray(self.occupancy, dtype=float)
        if self.occupancy.ndim != 3 or min(self.occupancy.shape) < 1:
            raise ConfigurationError(f"VoxelGrid: dims must be positive, got {self.occupancy.shape}")
        if self.occupancy.size and (self.occupancy.min() < 0.0 or self.occupancy.max() > 1.0):
            raise ConfigurationError("VoxelGrid: occupancy values must lie in [0, 1]")

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.occupancy.shape)

    def cell_centers(self) -> np.ndarray:
        axes = [self.origin[a] + (np.arange(n) + 0.5) * self.resolution for a, n in enumerate(self.dims)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def occupancy_at(self, points: np.ndarray) -> np.ndarray:
        """Occupancy of the cell containing each point; outside the grid is free"""
        points = np.asarray(points, dtype=float)
        idx = np.floor((points - self.origin) / self.resolution).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=-1)
        values = np.zeros(points.shape[:-1], dtype=float)
        hit = idx[inside]
        values[inside] = self.occupancy[hit[:, 0], hit[:, 1], hit[:, 2]]
        return values

    def export(self, path: str) -> Tuple[Path, Path]:
        """Write `<path>.npy` (flat occupancy) and `<path>.json` (dims, origin, resolution)"""
        base = Path(path)
        base.parent.mkdir(parents=True, exist_ok=True)
        data_path = base.with_suffix(".npy")
        header_path = base.with_suffix(".json")
        np.save(data_path, self.occupancy.ravel())
        header = {
            "dims": list(self.dims),
            "origin": self.origin.tolist(),
            "resolution": self.resolution,
            "dtype": str(self.occupancy.dtype),
            "order": "C",
        }
        with open(header_path, "w") as f:
            json.dump(header, f, indent=2)
        logger.info(f"Exported voxel grid {self.dims} to {data_path}")
        return data_path, header_path


@dataclass
class DistanceField:
    """Signed distance (meters) on the VoxelGrid cell centers"""
    origin: np.ndarray
    resolution: float
    distances: np.ndarray

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.distances.shape)

    @property
    def is_empty(self) -> bool:
        return not np.isfinite(self.distances).any()

    def _lookup(self, points: np.ndarray):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        dims = np.asarray(self.dims)
        u = (points - self.origin) / self.resolution - 0.5
        clamped = (u < 0.0) | (u > dims - 1)
        u = np.clip(u, 0.0, dims - 1)
        i0 = np.minimum(np.floor(u).astype(np.int64), np.maximum(dims - 2, 0))
        i1 = np.minimum(i0 + 1, dims - 1)
        frac = u - i0
        return points, i0, i1, frac, clamped

    def query(self, points: np.ndarray, with_gradient: bool = False):
        """Trilinear signed distance (and its gradient) at world points.

        Points outside the grid are clamped to the boundary cell centers, so the
        gradient along a clamped axis is zero. An obstacle-free grid returns +inf
        with zero gradient.
        """
        points = np.asarray(points, dtype=float)
        shape = points.shape[:-1]
        if self.is_empty:
            values = np.full(shape, np.inf)
            if with_gradient:
                return values, np.zeros(shape + (3,))
            return values

        flat, i0, i1, frac, clamped = self._lookup(points.reshape(-1, 3))
        d = self.distances
        corners = {}
        for cx in (0, 1):
            for cy in (0, 1):
                for cz in (0, 1):
                    ix = i1[:, 0] if cx else i0[:, 0]
                    iy = i1[:, 1] if cy else i0[:, 1]
                    iz = i1[:, 2] if cz else i0[:, 2]
                    corners[(cx, cy, cz)] = d[ix, iy, iz]

        fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
        wx = (1.0 - fx, fx)
        wy = (1.0 - fy, fy)
        wz = (1.0 - fz, fz)
        values = np.zeros(len(flat))
        for (cx, cy, cz), c in corners.items():
            values += wx[cx] * wy[cy] * wz[cz] * c
        if not with_gradient:
            return values.reshape(shape)

        # d(weight)/d(frac) is ±1 per axis
        sign = (-1.0, 1.0)
        grad = np.zeros((len(flat), 3))
        for (cx, cy, cz), c in corners.items():
            grad[:, 0] += sign[cx] * wy[cy] * wz[cz] * c
            grad[:, 1] += wx[cx] * sign[cy] * wz[cz] * c
            grad[:, 2] += wx[cx] * wy[cy] * sign[cz] * c
        grad /= self.resolution
        # Axes with a single cell or clamped coordinates are flat
        grad[:, np.asarray(self.dims) < 2] = 0.0
        grad[clamped] = 0.0
        return values.reshape(shape), grad.reshape(shape + (3,))


@dataclass
class SphericalGrid:
    """Occupancy regridded onto the lattice for each planning timestep.

    occupancy[t, s] is the occupancy at state s's world position; ray_occupancy
    [t, s, k] holds samples along the segment from that position to the actor,
    each weighted by ray_weights[s, k] (arc length, zero for padding).
    """
    lattice: Lattice
    actor_path: List[ActorPose]
    positions: np.ndarray
    occupancy: np.ndarray
    ray_occupancy: np.ndarray
    ray_weights: np.ndarray

    @property
    def horizon_steps(self) -> int:
        return self.occupancy.shape[0]

    def occlusion(self) -> np.ndarray:
        """(T, |S|) arc-length-weighted occupancy along each sight line"""
        return np.einsum("tsk,sk->ts", self.ray_occupancy, self.ray_weights)


def voxelize(scene: SceneDescription, resolution: float) -> VoxelGrid:
    """Mark every cell that overlaps a box or cylinder with positive volume"""
    if not resolution > 0.0:
        raise ConfigurationError(f"voxelize: resolution must be positive, got {resolution}")
    lo = np.asarray(scene.bounds_min, dtype=float)
    hi = np.asarray(scene.bounds_max, dtype=float)
    if lo.shape != (3,) or hi.shape != (3,) or not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
        raise ConfigurationError("voxelize: scene bounds must be finite 3-vectors")
    if np.any(hi <= lo):
        raise ConfigurationError(f"voxelize: empty scene bounds {lo.tolist()} .. {hi.tolist()}")

    dims = np.maximum(np.ceil((hi - lo) / resolution - _FACE_EPS).astype(int), 1)
    cell_lo = [lo[a] + np.arange(dims[a]) * resolution for a in range(3)]
    cell_hi = [c + resolution for c in cell_lo]
    occupancy = np.zeros(tuple(dims), dtype=float)

    for box in scene.boxes:
        b_lo, b_hi = np.asarray(box.min, dtype=float), np.asarray(box.max, dtype=float)
        overlap = [(cell_lo[a] < b_hi[a] - _FACE_EPS) & (cell_hi[a] > b_lo[a] + _FACE_EPS) for a in range(3)]
        occupancy[np.ix_(*overlap)] = 1.0

    for cyl in scene.cylinders:
        cx, cy = cyl.center
        # Closest point of each cell's xy rectangle to the axis
        dx = np.maximum(np.maximum(cell_lo[0] - cx, cx - cell_hi[0]), 0.0)
        dy = np.maximum(np.maximum(cell_lo[1] - cy, cy - cell_hi[1]), 0.0)
        disc = (dx[:, None] ** 2 + dy[None, :] ** 2) < (cyl.radius - _FACE_EPS) ** 2
        z_overlap = (cell_lo[2] < cyl.z_max - _FACE_EPS) & (cell_hi[2] > cyl.z_min + _FACE_EPS)
        occupancy[disc[:, :, None] & z_overlap[None, None, :]] = 1.0

    logger.info(
        f"Voxelized {len(scene.boxes)} boxes and {len(scene.cylinders)} cylinders "
        f"into {tuple(dims)} cells ({int(occupancy.sum())} occupied)"
    )
    return VoxelGrid(origin=lo, resolution=float(resolution), occupancy=occupancy)


def distance_field(grid: VoxelGrid, threshold: float = 0.5) -> DistanceField:
    """Exact Euclidean signed distance transform on cell centers.

    Free cells get the distance to the nearest occupied cell center; occupied
    cells get minus the distance to the nearest free cell, shifted by one cell so
    the obstacle boundary reads zero. An obstacle-free grid is all +inf.
    """
    occupied = grid.occupancy >= threshold
    if not occupied.any():
        distances = np.full(grid.dims, np.inf)
    else:
        outside = ndimage.distance_transform_edt(~occupied, sampling=grid.resolution)
        if occupied.all():
            inside = np.zeros(grid.dims)
        else:
            inside = ndimage.distance_transform_edt(occupied, sampling=grid.resolution) - grid.resolution
        distances = np.where(occupied, -inside, outside)
    return DistanceField(origin=grid.origin.copy(), resolution=grid.resolution, distances=distances)


def spherical_regrid(grid: VoxelGrid, actor_path: Sequence[ActorPose], lattice: Lattice) -> SphericalGrid:
    """Occupancy at every (state, timestep) plus sight-line samples toward the actor"""
    T = len(actor_path)
    S = lattice.size
    rho = lattice.rho
    # One sample per voxel resolution of arc length, taken at segment midpoints
    n_samples = np.maximum(np.ceil(rho / grid.resolution - _FACE_EPS).astype(int), 1)
    K = int(n_samples.max())
    k = np.arange(K)
    valid = k[None, :] < n_samples[:, None]
    fractions = np.where(valid, (k[None, :] + 0.5) / n_samples[:, None], 0.0)
    ray_weights = np.where(valid, (rho / n_samples)[:, None], 0.0)

    positions = np.zeros((T, S, 3))
    occupancy = np.zeros((T, S))
    ray_occupancy = np.zeros((T, S, K))
    for t, actor in enumerate(actor_path):
        world = lattice.world_positions(actor)
        positions[t] = world
        occupancy[t] = grid.occupancy_at(world)
        a = actor.position
        # fraction 0 is the camera, 1 the actor
        samples = world[:, None, :] + fractions[:, :, None] * (a - world)[:, None, :]
        ray_occupancy[t] = np.where(valid, grid.occupancy_at(samples), 0.0)

    logger.debug(f"Regridded {T} timesteps x {S} states ({K} ray samples max)")
    return SphericalGrid(
        lattice=lattice,
        actor_path=list(actor_path),
        positions=positions,
        occupancy=occupancy,
        ray_occupancy=ray_occupancy,
        ray_weights=ray_weights,
    )


@dataclass
class ActorScript:
    """Timestamped actor waypoints; linear position, shortest-arc heading"""
    times: np.ndarray
    poses: List[ActorPose]

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.poses) or len(self.poses) < 1:
            raise ConfigurationError("ActorScript: needs one pose per timestamp and at least one waypoint")
        if np.any(np.diff(self.times) <= 0.0):
            raise ConfigurationError("ActorScript: timestamps must be strictly increasing")
        self._xyz = np.array([p.position for p in self.poses])
        self._heading = np.unwrap(np.array([p.heading for p in self.poses]))

    @property
    def start_time(self) -> float:
        return float(self.times[0])

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    def translated(self, offset: Sequence[float]) -> "ActorScript":
        o = np.asarray(offset, dtype=float)
        return ActorScript(
            times=self.times.copy(),
            poses=[ActorPose(p.x + o[0], p.y + o[1], p.z + o[2], p.heading) for p in self.poses],
        )

    def window(self, t0: float, steps: int, dt: float) -> List[ActorPose]:
        """Poses at t0 + k·dt; times past the script end hold the final pose"""
        return [actor_at(self, min(t0 + k * dt, self.end_time)) for k in range(steps)]


def actor_at(script: ActorScript, t: float) -> ActorPose:
    """Interpolated actor pose at time t"""
    tol = 1e-9 * max(1.0, abs(script.end_time))
    if t < script.start_time - tol or t > script.end_time + tol:
        raise RangeError(f"t={t} outside actor script [{script.start_time}, {script.end_time}]", module="world")
    t = min(max(t, script.start_time), script.end_time)

    i = int(np.searchsorted(script.times, t))
    if i < len(script.times) and script.times[i] == t:
        return script.poses[i]
    x, y, z = (float(np.interp(t, script.times, script._xyz[:, a])) for a in range(3))
    heading = float(np.interp(t, script.times, script._heading))
    return ActorPose(x, y, z, heading)
