"""
Live image-stream selector
Scores each camera from inter-drone visibility and prior costs, decays the
on-air camera's score and enforces minimum / maximum shot lengths.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigurationError

logger = logging.getLogger(__name__)

# Comparisons against shot limits tolerate accumulated dt round-off
_TIME_EPS = 1e-9


@dataclass(frozen=True)
class SelectorConfig:
    w_vis: float = 1.0
    w_cine: float = 1.0
    decay_rate: float = 0.7
    recovery_rate: float = 0.2
    min_shot: float = 3.0
    max_shot: float = 8.0

    def __post_init__(self):
        if self.w_vis < 0.0 or self.w_cine < 0.0:
            raise ConfigurationError("SelectorConfig: w_vis and w_cine must be non-negative")
        if not 0.0 < self.decay_rate < 1.0:
            raise ConfigurationError(f"SelectorConfig: decay_rate must lie in (0, 1), got {self.decay_rate}")
        if not self.recovery_rate > 0.0:
            raise ConfigurationError(f"SelectorConfig: recovery_rate must be positive, got {self.recovery_rate}")
        if not 0.0 < self.min_shot < self.max_shot:
            raise ConfigurationError(
                f"SelectorConfig: need 0 < min_shot < max_shot, got {self.min_shot}, {self.max_shot}"
            )


@dataclass(frozen=True)
class CameraCosts:
    vis_cost: float
    cine_cost: float


@dataclass(frozen=True)
class SelectorState:
    current: int
    time_in_shot: float
    multipliers: Tuple[float, ...]

    @classmethod
    def start(cls, n_cameras: int, first: int = 0) -> "SelectorState":
        if n_cameras < 1:
            raise ConfigurationError("selector needs at least one camera")
        return cls(current=first, time_in_shot=0.0, multipliers=(1.0,) * n_cameras)


def score(costs: Sequence[CameraCosts], state: SelectorState, cfg: SelectorConfig) -> np.ndarray:
    """Q_i = multiplier_i · exp(-(w_vis·vis_i + w_cine·cine_i)); higher is better"""
    weighted = np.array([cfg.w_vis * c.vis_cost + cfg.w_cine * c.cine_cost for c in costs])
    return np.asarray(state.multipliers) * np.exp(-weighted)


def _best_other(Q: np.ndarray, current: int) -> int:
    others = np.delete(np.arange(len(Q)), current)
    # argmax returns the first maximum, i.e. the lowest id among ties
    return int(others[int(np.argmax(Q[others]))])


def step(state: SelectorState, Q: Sequence[float], dt: float, cfg: SelectorConfig) -> SelectorState:
    """Advance the selector by dt seconds"""
    if not dt > 0.0:
        raise ConfigurationError(f"selector dt must be positive, got {dt}")
    Q = np.asarray(Q, dtype=float)
    current = state.current
    if len(Q) > 1 and state.time_in_shot >= cfg.min_shot - _TIME_EPS:
        best = _best_other(Q, current)
        # Cut before the shot would run past max_shot
        forced = state.time_in_shot + dt > cfg.max_shot + _TIME_EPS
        if forced or Q[best] > Q[current]:
            current = best

    switched = current != state.current
    multipliers = np.asarray(state.multipliers, dtype=float)
    decayed = multipliers[current] * cfg.decay_rate ** dt
    multipliers = np.minimum(multipliers + cfg.recovery_rate * dt, 1.0)
    multipliers[current] = decayed
    return SelectorState(
        current=current,
        time_in_shot=dt if switched else state.time_in_shot + dt,
        multipliers=tuple(float(m) for m in multipliers),
    )


@dataclass
class LiveSelector:
    """Stateful stepper that keeps the (t_start, t_end, camera) timeline"""
    cfg: SelectorConfig
    n_cameras: int
    t: float = 0.0
    state: Optional[SelectorState] = None
    shots: List[Tuple[float, float, int]] = field(default_factory=list)
    _shot_start: float = 0.0
    _fresh: bool = True

    def __post_init__(self):
        if self.state is None:
            self.state = SelectorState.start(self.n_cameras)
        self._shot_start = self.t

    def advance(self, costs: Sequence[CameraCosts], dt: float) -> int:
        Q = score(costs, self.state, self.cfg)
        if self._fresh:
            # Open on the best-scoring camera
            self.state = replace(self.state, current=int(np.argmax(Q)))
            self._fresh = False
        previous = self.state.current
        self.state = step(self.state, Q, dt, self.cfg)
        if self.state.current != previous:
            self.shots.append((self._shot_start, self.t, previous))
            self._shot_start = self.t
            logger.debug(f"t={self.t:.2f}s: cut from camera {previous} to {self.state.current}")
        self.t += dt
        return self.state.current

    def timeline(self) -> List[Tuple[float, float, int]]:
        """Completed shots plus the one still on air"""
        return self.shots + [(self._shot_start, self.t, self.state.current)]

    def completed_shot_lengths(self) -> List[float]:
        return [end - begin for begin, end, _ in self.shots]
