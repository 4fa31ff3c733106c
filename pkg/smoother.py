"""
Decentralized per-UAV trajectory smoother
Turns a coarse lattice path into a dense trajectory by covariant gradient
descent on smoothness, waypoint tracking, obstacle, sight-line occlusion and
inter-UAV separation costs.
"""

import math
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from errors import ConfigurationError, NumericError, RangeError
from world import DistanceField

logger = logging.getLogger(__name__)

SMOOTHER_TERMS = ("smooth", "track", "obs", "occ", "sep")


@dataclass(frozen=True)
class SmootherConfig:
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
    # Curve points per fine interval checked by the obstacle and separation terms; 1 checks samples only
    check_substeps: int = 4

    def __post_init__(self):
        for name in ("w_smooth", "w_track", "w_obs", "w_sep", "w_occ", "obstacle_margin", "occ_margin", "convergence_tol"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0.0:
                raise ConfigurationError(f"SmootherConfig: {name} must be finite and non-negative, got {value}")
        if not self.sep_distance > 0.0:
            raise ConfigurationError(f"SmootherConfig: sep_distance must be positive, got {self.sep_distance}")
        if not self.fine_dt > 0.0:
            raise ConfigurationError(f"SmootherConfig: fine_dt must be positive, got {self.fine_dt}")
        if self.max_iters < 0 or self.occ_samples < 1:
            raise ConfigurationError("SmootherConfig: max_iters must be >= 0 and occ_samples >= 1")
        if self.check_substeps < 1:
            raise ConfigurationError(f"SmootherConfig: check_substeps must be >= 1, got {self.check_substeps}")
        if not self.step_size > 0.0 or not self.metric_damping > 0.0:
            raise ConfigurationError("SmootherConfig: step_size and metric_damping must be positive")


@dataclass
class FinePath:
    """Dense trajectory at fine_dt spacing; positions[0] is the fixed start"""
    uav_id: int
    t0: float
    fine_dt: float
    positions: np.ndarray
    iterations: int = 0
    objective_trace: List[float] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.positions)) * self.fine_dt

    @property
    def horizon(self) -> float:
        return (len(self.positions) - 1) * self.fine_dt

    @property
    def start(self) -> np.ndarray:
        return self.positions[0]


@dataclass
class SmootherContext:
    """Inputs aligned with the fine samples of one UAV's path.

    waypoints[k] is the greedy world position at fine sample waypoint_samples[k];
    others[o] is another UAV's expected position at every fine sample; actor is
    the actor position at every fine sample (only needed when w_occ > 0).
    """
    waypoints: np.ndarray
    waypoint_samples: np.ndarray
    sdf: DistanceField
    others: List[np.ndarray] = field(default_factory=list)
    actor: Optional[np.ndarray] = None


def sample_count(horizon: float, fine_dt: float) -> int:
    return int(round(horizon / fine_dt)) + 1


def waypoint_sample_indices(horizon_steps: int, step_dt: float, fine_dt: float) -> np.ndarray:
    ratio = step_dt / fine_dt
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigurationError(f"step_dt ({step_dt}) must be a multiple of fine_dt ({fine_dt})")
    return np.arange(horizon_steps) * int(round(ratio))


def initial_positions(start: np.ndarray, ctx: SmootherContext, n_samples: int) -> np.ndarray:
    """Linear interpolation through the waypoints; the tail past the last one holds still"""
    sample_axis = np.arange(n_samples)
    positions = np.stack(
        [np.interp(sample_axis, ctx.waypoint_samples, ctx.waypoints[:, a]) for a in range(3)], axis=1
    )
    positions[0] = start
    return positions


@lru_cache(maxsize=32)
def _second_difference(n: int) -> np.ndarray:
    D = np.zeros((max(n - 2, 0), n))
    for i in range(n - 2):
        D[i, i:i + 3] = (1.0, -2.0, 1.0)
    return D


@lru_cache(maxsize=32)
def _metric_factor(n: int, damping: float):
    """Cholesky factor of the smoothness metric over the free samples 1..n-1"""
    D = _second_difference(n)[:, 1:]
    M = D.T @ D + damping * np.eye(n - 1)
    return cho_factor(M)


def _catmull_rom_weights(f: float) -> np.ndarray:
    f2, f3 = f * f, f * f * f
    return 0.5 * np.array([-f + 2.0 * f2 - f3, 2.0 - 5.0 * f2 + 3.0 * f3, f + 4.0 * f2 - 3.0 * f3, f3 - f2])


@lru_cache(maxsize=32)
def _curve_matrix(n: int, substeps: int) -> np.ndarray:
    """(m, n) map from the n fine samples to m = (n-1)·substeps + 1 points on the curve `sample` traces.

    Row i·substeps + k is the curve at fraction k/substeps of interval i; the last
    row is the final sample.
    """
    if n < 2 or substeps == 1:
        return np.eye(n)
    B = np.zeros(((n - 1) * substeps + 1, n))
    for i in range(n - 1):
        for k in range(substeps):
            row = B[i * substeps + k]
            f = k / substeps
            if k == 0:
                row[i] = 1.0
            elif i == 0 or i == n - 2:
                row[i], row[i + 1] = 1.0 - f, f
            else:
                row[i - 1:i + 3] = _catmull_rom_weights(f)
    B[-1, n - 1] = 1.0
    return B


def _hinge(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _occ_fractions(cfg: SmootherConfig) -> np.ndarray:
    # Stop short of the actor itself
    return 0.9 * (np.arange(cfg.occ_samples) + 1.0) / cfg.occ_samples


def objective_terms(positions: np.ndarray, ctx: SmootherContext, cfg: SmootherConfig) -> Dict[str, float]:
    x = positions
    terms = dict.fromkeys(SMOOTHER_TERMS, 0.0)
    if cfg.w_smooth > 0.0 and len(x) > 2:
        dd = x[:-2] - 2.0 * x[1:-1] + x[2:]
        terms["smooth"] = cfg.w_smooth * float(np.sum(dd * dd))
    if cfg.w_track > 0.0:
        err = x[ctx.waypoint_samples] - ctx.waypoints
        terms["track"] = cfg.w_track * float(np.sum(err * err))
    # Obstacle and separation hinges run over the whole curve, each point weighted 1/substeps
    B = _curve_matrix(len(x), cfg.check_substeps)
    w_point = 1.0 / cfg.check_substeps
    if cfg.w_obs > 0.0 and not ctx.sdf.is_empty:
        sd = ctx.sdf.query(B @ x)
        terms["obs"] = cfg.w_obs * w_point * float(np.sum(_hinge(cfg.obstacle_margin - sd) ** 2))
    if cfg.w_occ > 0.0 and ctx.actor is not None and not ctx.sdf.is_empty:
        s = _occ_fractions(cfg)
        q = x[:, None, :] + s[None, :, None] * (ctx.actor - x)[:, None, :]
        sd = ctx.sdf.query(q)
        terms["occ"] = cfg.w_occ * float(np.sum(_hinge(cfg.occ_margin - sd) ** 2))
    if cfg.w_sep > 0.0:
        curve = B @ x
        for other in ctx.others:
            d = np.linalg.norm(curve - B @ other, axis=1)
            terms["sep"] += cfg.w_sep * w_point * float(np.sum(_hinge(cfg.sep_distance - d) ** 2))
    return terms


def objective(positions: np.ndarray, ctx: SmootherContext, cfg: SmootherConfig) -> float:
    terms = objective_terms(positions, ctx, cfg)
    return sum(terms[name] for name in SMOOTHER_TERMS)


def gradient(positions: np.ndarray, ctx: SmootherContext, cfg: SmootherConfig) -> np.ndarray:
    """Analytic gradient w.r.t. the free samples 1..N-1, shape (N-1, 3)"""
    x = positions
    g = np.zeros_like(x)
    if cfg.w_smooth > 0.0 and len(x) > 2:
        D = _second_difference(len(x))
        g += 2.0 * cfg.w_smooth * (D.T @ (D @ x))
    if cfg.w_track > 0.0:
        np.add.at(g, ctx.waypoint_samples, 2.0 * cfg.w_track * (x[ctx.waypoint_samples] - ctx.waypoints))
    B = _curve_matrix(len(x), cfg.check_substeps)
    w_point = 1.0 / cfg.check_substeps
    if cfg.w_obs > 0.0 and not ctx.sdf.is_empty:
        sd, dsd = ctx.sdf.query(B @ x, with_gradient=True)
        violation = _hinge(cfg.obstacle_margin - sd)
        g += B.T @ ((-2.0 * cfg.w_obs * w_point * violation)[:, None] * dsd)
    if cfg.w_occ > 0.0 and ctx.actor is not None and not ctx.sdf.is_empty:
        s = _occ_fractions(cfg)
        q = x[:, None, :] + s[None, :, None] * (ctx.actor - x)[:, None, :]
        sd, dsd = ctx.sdf.query(q, with_gradient=True)
        violation = _hinge(cfg.occ_margin - sd)
        # dq/dx = (1 - s)·I
        g += np.sum((-2.0 * cfg.w_occ * violation * (1.0 - s)[None, :])[:, :, None] * dsd, axis=1)
    if cfg.w_sep > 0.0:
        curve = B @ x
        for other in ctx.others:
            diff = curve - B @ other
            d = np.linalg.norm(diff, axis=1)
            violation = _hinge(cfg.sep_distance - d)
            safe = np.where(d > 1e-12, d, 1.0)
            direction = np.where((d > 1e-12)[:, None], diff / safe[:, None], 0.0)
            g += B.T @ ((-2.0 * cfg.w_sep * w_point * violation)[:, None] * direction)
    return g[1:]


def optimize(
    start: np.ndarray,
    ctx: SmootherContext,
    cfg: SmootherConfig,
    horizon: float,
    uav_id: int = 0,
    t0: float = 0.0,
) -> FinePath:
    """Covariant gradient descent x <- x - η·M⁻¹∇F with step halving on increase"""
    n = sample_count(horizon, cfg.fine_dt)
    x = initial_positions(np.asarray(start, dtype=float), ctx, n)
    F = objective(x, ctx, cfg)
    if not math.isfinite(F):
        raise NumericError(f"non-finite smoother objective for UAV {uav_id}", module="smoother")

    trace = [F]
    iterations = 0
    factor = _metric_factor(n, cfg.metric_damping) if n > 1 else None
    eta = cfg.step_size
    for _ in range(cfg.max_iters if n > 1 else 0):
        g = gradient(x, ctx, cfg)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite smoother gradient for UAV {uav_id}", module="smoother")
        if not np.any(g):
            break
        direction = cho_solve(factor, g)

        accepted = False
        trial = min(cfg.step_size, 2.0 * eta)
        while trial >= cfg.step_size * 1e-6:
            candidate = x.copy()
            candidate[1:] -= trial * direction
            F_new = objective(candidate, ctx, cfg)
            if not math.isfinite(F_new):
                raise NumericError(f"non-finite smoother objective for UAV {uav_id}", module="smoother")
            if F_new <= F:
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            break

        eta = trial
        iterations += 1
        decrease = (F - F_new) / max(abs(F), 1e-300)
        x, F = candidate, F_new
        trace.append(F)
        if decrease < cfg.convergence_tol:
            break

    logger.debug(f"UAV {uav_id}: smoother {iterations} iterations, objective {trace[0]:.4f} -> {F:.4f}")
    return FinePath(uav_id=uav_id, t0=t0, fine_dt=cfg.fine_dt, positions=x, iterations=iterations, objective_trace=trace)


def sample(path: FinePath, t: float) -> np.ndarray:
    """Position at absolute time t: Catmull-Rom inside, linear on the end intervals"""
    tol = 1e-9 * max(1.0, abs(path.t0) + path.horizon)
    u = (t - path.t0) / path.fine_dt
    last = len(path.positions) - 1
    if u < -tol / path.fine_dt or u > last + tol / path.fine_dt:
        raise RangeError(f"t={t} outside fine path [{path.t0}, {path.t0 + path.horizon}]", module="smoother")
    u = min(max(u, 0.0), float(last))
    p = path.positions
    if last == 0:
        return p[0].copy()

    i = min(int(math.floor(u)), last - 1)
    f = u - i
    if f == 0.0:
        return p[i].copy()
    if i == 0 or i == last - 1:
        return (1.0 - f) * p[i] + f * p[i + 1]
    p0, p1, p2, p3 = p[i - 1], p[i], p[i + 1], p[i + 2]
    f2, f3 = f * f, f * f * f
    return 0.5 * (
        2.0 * p1
        + (p2 - p0) * f
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * f2
        + (3.0 * p1 - p0 - 3.0 * p2 + p3) * f3
    )


def sample_many(path: FinePath, times: Sequence[float]) -> np.ndarray:
    return np.array([sample(path, t) for t in times])


def resample_clamped(path: FinePath, times: Sequence[float]) -> np.ndarray:
    """Positions at `times`, holding the end points outside the path span"""
    end = path.t0 + path.horizon
    return np.array([sample(path, min(max(t, path.t0), end)) for t in times])
