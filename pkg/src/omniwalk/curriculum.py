"""Velocity scheduler and command interpolation.

Target velocities are sampled once per episode from a box that grows
linearly from a single core velocity to the final bounds over ``zeta``
episodes. The command fed to the policy ramps linearly from the previous
target to the new one.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .mathkit import ConfigurationError, RngStream


def _vec3(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    if a.shape != (3,):
        raise ConfigurationError(f"expected a 3-vector, got {x!r}")
    return a


@dataclass
class SchedulerConfig:
    v_core: np.ndarray = field(default_factory=lambda: np.array([0.4, 0.0, 0.0]))
    final_lo: np.ndarray = field(default_factory=lambda: np.array([-0.6, -0.6, -0.6]))
    final_hi: np.ndarray = field(default_factory=lambda: np.array([0.6, 0.6, 0.6]))
    zeta: int = 3000
    transition_duration: float = 1.0
    enabled: bool = True  # False: full box from episode 0 (no-curriculum ablation)

    def __post_init__(self):
        self.v_core = _vec3(self.v_core)
        self.final_lo = _vec3(self.final_lo)
        self.final_hi = _vec3(self.final_hi)
        if np.any(self.final_lo > self.v_core) or np.any(self.v_core > self.final_hi):
            raise ConfigurationError("v_core must lie inside the final velocity bounds")
        if self.zeta < 1:
            raise ConfigurationError("zeta must be >= 1")
        if self.transition_duration <= 0:
            raise ConfigurationError("transition duration must be positive")


@dataclass(frozen=True)
class VelocityBounds:
    lower: np.ndarray
    upper: np.ndarray

    def contains(self, v) -> bool:
        v = np.asarray(v)
        return bool(np.all(self.lower <= v) and np.all(v <= self.upper))

    def within(self, other: "VelocityBounds") -> bool:
        return bool(np.all(other.lower <= self.lower) and np.all(self.upper <= other.upper))


def bounds_at(config: SchedulerConfig, episode: int) -> VelocityBounds:
    if episode < 0:
        raise ValueError("episode index must be non-negative")
    if not config.enabled:
        return VelocityBounds(config.final_lo.copy(), config.final_hi.copy())
    frac = min(1.0, episode / config.zeta)
    lo = config.v_core + frac * (config.final_lo - config.v_core)
    hi = config.v_core + frac * (config.final_hi - config.v_core)
    if frac >= 1.0:
        lo, hi = config.final_lo.copy(), config.final_hi.copy()
    return VelocityBounds(lo, hi)


def limit_episode(config: SchedulerConfig) -> int:
    """First episode index at which the final box is in effect."""
    return 0 if not config.enabled else config.zeta


def sample_target(bounds: VelocityBounds, rng: RngStream) -> np.ndarray:
    u = rng.uniform(0.0, 1.0, 3)
    return bounds.lower + u * (bounds.upper - bounds.lower)


class EpisodeCounter:
    """Global episode counter shared by all environments of a trainer."""

    def __init__(self, start: int = 0):
        self._value = int(start)
        self._lock = threading.Lock()

    def next(self) -> int:
        with self._lock:
            v = self._value
            self._value += 1
            return v

    @property
    def value(self) -> int:
        return self._value

    @value.setter
    def value(self, v: int) -> None:
        with self._lock:
            self._value = int(v)


@dataclass
class CommandState:
    v_old: np.ndarray
    v_new: np.ndarray
    progress: float = 0.0
    duration: float = 1.0

    def __post_init__(self):
        self.v_old = _vec3(self.v_old)
        self.v_new = _vec3(self.v_new)
        if self.duration <= 0:
            raise ValueError("transition duration must be positive")

    def current(self) -> np.ndarray:
        if self.progress <= 0.0:
            return self.v_old.copy()
        if self.progress >= 1.0:
            return self.v_new.copy()
        return self.v_old + self.progress * (self.v_new - self.v_old)

    def retarget(self, v_new) -> None:
        """Start a new ramp from the currently emitted command."""
        self.v_old = self.current()
        self.v_new = _vec3(v_new)
        self.progress = 0.0


def step_command(state: CommandState, dt: float) -> np.ndarray:
    state.progress = min(1.0, state.progress + dt / state.duration)
    return state.current()
