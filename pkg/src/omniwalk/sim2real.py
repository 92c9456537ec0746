"""Transfer aids that sit between policy and environment.

* per-episode randomisation of PD-target scales, friction and latency
* additive Gaussian sensor noise keyed by channel role
* observation latency via linear interpolation over a recorded history
* second-order Butterworth filtering of policy actions
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .mathkit import ButterworthState, ConfigurationError, RngStream, butterworth_filter

# channel roles used to pick a noise standard deviation
GYRO, ACCEL, ENCODER, VELOCITY, COMMAND = "gyro", "accelerometer", "encoder", "velocity", "command"
ROLES = (GYRO, ACCEL, ENCODER, VELOCITY, COMMAND)


@dataclass
class NoiseConfig:
    pd_scale: float = 0.1  # half-width of the uniform PD-target scale factor
    gyro: float = 1e-4
    accelerometer: float = 1e-4
    encoder: float = 1e-3
    velocity: float = 1e-3

    def __post_init__(self):
        for k in ("pd_scale", "gyro", "accelerometer", "encoder", "velocity"):
            if getattr(self, k) < 0:
                raise ConfigurationError(f"noise.{k} must be non-negative")

    def std_for(self, role: str) -> float:
        if role == COMMAND:
            return 0.0
        if role not in ROLES:
            raise ConfigurationError(f"untagged or unknown observation channel role {role!r}")
        return getattr(self, role)


@dataclass
class FrictionConfig:
    tangential: tuple[float, float] = (0.4, 0.8)
    torsional: tuple[float, float] = (0.1, 0.3)

    def __post_init__(self):
        self.tangential = tuple(float(x) for x in self.tangential)
        self.torsional = tuple(float(x) for x in self.torsional)
        for lo, hi in (self.tangential, self.torsional):
            if not 0 < lo <= hi:
                raise ConfigurationError("friction ranges need 0 < min <= max")


@dataclass
class LatencyConfig:
    range: tuple[float, float] = (0.0, 0.050)
    eval_latency: float = 0.008

    def __post_init__(self):
        self.range = tuple(float(x) for x in self.range)
        if not 0.0 <= self.range[0] <= self.range[1]:
            raise ConfigurationError("latency range must satisfy 0 <= min <= max")


@dataclass
class TransferConfig:
    """Switches and parameters for the whole wrapper chain."""

    noise: NoiseConfig = field(default_factory=NoiseConfig)
    friction: FrictionConfig = field(default_factory=FrictionConfig)
    latency: LatencyConfig = field(default_factory=LatencyConfig)
    filter_cutoff_hz: float = 10.0
    pd_noise: bool = True
    sensor_noise: bool = True
    randomize_friction: bool = True
    randomize_latency: bool = True
    action_filter: bool = False  # training default; evaluation switches it on
    fixed_latency: float | None = None  # evaluation: constant latency instead of sampling

    @classmethod
    def disabled(cls) -> "TransferConfig":
        return cls(pd_noise=False, sensor_noise=False, randomize_friction=False,
                   randomize_latency=False, action_filter=False)

    @property
    def any_enabled(self) -> bool:
        return (self.pd_noise or self.sensor_noise or self.randomize_friction
                or self.randomize_latency or self.action_filter or bool(self.fixed_latency))


@dataclass
class EpisodeRandomization:
    pd_scales: np.ndarray
    mu_tangential: float
    mu_torsional: float
    latency: float


def sample_episode_randomization(noise: NoiseConfig, friction: FrictionConfig,
                                 latency: LatencyConfig, n_joints: int,
                                 rng: RngStream) -> EpisodeRandomization:
    eps = noise.pd_scale
    scales = rng.uniform(1.0 - eps, 1.0 + eps, n_joints) if eps > 0 else np.ones(n_joints)
    mu_t = rng.uniform(*friction.tangential)
    mu_z = rng.uniform(*friction.torsional)
    t_lat = rng.uniform(*latency.range)
    return EpisodeRandomization(np.asarray(scales, dtype=np.float64), float(mu_t), float(mu_z),
                                float(t_lat))


def apply_pd_noise(delta, scales) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    if delta.shape != scales.shape:
        raise ValueError(f"action/scale length mismatch: {delta.shape} vs {scales.shape}")
    return delta * scales


def noise_std_vector(roles, noise: NoiseConfig) -> np.ndarray:
    return np.array([noise.std_for(r) for r in roles], dtype=np.float64)


def apply_sensor_noise(values, roles, noise: NoiseConfig, rng: RngStream) -> np.ndarray:
    """Add zero-mean Gaussian noise per channel role; command channels are exempt."""
    values = np.asarray(values, dtype=np.float64)
    std = noise_std_vector(roles, noise)
    if std.shape != values.shape:
        raise ConfigurationError("every observation channel needs a role tag")
    return values + std * rng.normal(0.0, 1.0, values.shape)


class LatencyBuffer:
    """History of observations sampled at the control rate.

    ``delayed(now)`` linearly interpolates between the two records that
    bracket ``now - latency``.
    """

    def __init__(self, period: float, max_latency: float, latency: float = 0.0):
        self.period = float(period)
        self.latency = float(latency)
        self.max_latency = float(max_latency)
        # +2: one record beyond the bracket plus the current one
        self.capacity = int(np.ceil(self.max_latency / self.period + 1e-9)) + 2
        self.times: deque = deque(maxlen=self.capacity)
        self.values: deque = deque(maxlen=self.capacity)
        self.cold_reads = 0

    def clear(self) -> None:
        self.times.clear()
        self.values.clear()

    def record(self, t: float, obs) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError("latency buffer timestamps must be strictly increasing")
        self.times.append(float(t))
        self.values.append(np.asarray(obs, dtype=np.float64))

    def prefill(self, t: float, obs) -> None:
        """Fill the history with a constant observation ending at time ``t``."""
        self.clear()
        for k in range(self.capacity - 1, -1, -1):
            self.record(t - k * self.period, obs)

    def delayed(self, now: float) -> np.ndarray:
        return delayed_observation(self, now)


def delayed_observation(buffer: LatencyBuffer, now: float) -> np.ndarray:
    if not buffer.times:
        raise ValueError("latency buffer is empty")
    if buffer.latency == 0.0:
        return buffer.values[-1]
    target = now - buffer.latency
    times = buffer.times
    if target <= times[0]:
        if target < times[0] - 1e-12:
            buffer.cold_reads += 1
        return buffer.values[0]
    # newest first: records are few (<= capacity) so a linear scan is enough
    for i in range(len(times) - 1, 0, -1):
        t0 = times[i - 1]
        if t0 <= target:
            t1 = times[i]
            w = (target - t0) / (t1 - t0)
            # snap float round-off so grid-point reads are exact records
            if w <= 1e-9:
                return buffer.values[i - 1]
            if w >= 1.0 - 1e-9:
                return buffer.values[i]
            return (1.0 - w) * buffer.values[i - 1] + w * buffer.values[i]
    return buffer.values[0]


def make_action_filter(n: int, cutoff_hz: float, sample_hz: float) -> ButterworthState:
    return ButterworthState(cutoff_hz, sample_hz, n)


def filter_action(state: ButterworthState | None, delta) -> np.ndarray:
    """Low-pass the action; ``None`` means the filter is bypassed."""
    if state is None:
        return np.asarray(delta, dtype=np.float64)
    return butterworth_filter(state, delta)
