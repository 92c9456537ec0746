"""Four-term bounded locomotion reward and swing-leg bookkeeping.

Every term is a kernel value in (0, 1] scaled by the control period, so each
lies in ``[0, dt]``. The total is the weighted sum of the four terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mathkit import ConfigurationError, kernel_eval

LEFT, RIGHT = "left", "right"


@dataclass
class RewardWeights:
    w_vel: float = 42.0
    w_reg: float = 4.0
    w_alive: float = 4.0
    w_foot: float = 18.0
    l_vel: float = 9.0
    l_reg: float = 3.0
    l_foot: float = 10.0
    dt: float = 0.025
    w_phi: float = 5.0
    foot_clearance: float = 0.05
    hysteresis: float = 0.01

    def __post_init__(self):
        if min(self.w_vel, self.w_reg, self.w_alive, self.w_foot) < 0:
            raise ConfigurationError("reward weights must be non-negative")
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")


@dataclass
class CurriculumCoeff:
    value: float
    decay: float

    def __post_init__(self):
        if not 0.0 < self.value <= 1.0:
            raise ConfigurationError(f"curriculum coefficient must lie in (0, 1], got {self.value}")
        if not 0.0 < self.decay < 1.0:
            raise ConfigurationError(f"decay exponent must lie in (0, 1), got {self.decay}")


def update_curriculum_coeff(c: CurriculumCoeff) -> CurriculumCoeff:
    """Per-epoch update ``C <- C ** k_d``; 1 is a fixed point."""
    return CurriculumCoeff(c.value ** c.decay, c.decay)


def curriculum_coeff_after(c0: float, decay: float, n: int) -> float:
    """Closed form of ``n`` updates: ``C0 ** (k_d ** n)``."""
    return c0 ** (decay ** n)


@dataclass
class AliveThresholds:
    min_height: float
    max_roll: float = 0.5
    max_pitch: float = 0.5

    def __post_init__(self):
        if self.min_height <= 0:
            raise ConfigurationError("minimum base height must be positive")
        for a in (self.max_roll, self.max_pitch):
            if not 0.0 < a < math.pi / 2:
                raise ConfigurationError("angle limits must lie in (0, pi/2)")


@dataclass
class FootState:
    """Foot heights (world) and roll angles for both feet plus the swing side."""

    left_height: float = 0.0
    right_height: float = 0.0
    left_roll: float = 0.0
    right_roll: float = 0.0
    swing: str = RIGHT


def velocity_error(v_cmd, v_local, v_ref, omega_z: float) -> float:
    ex0 = v_cmd[0] - v_local[0]
    ey0 = v_cmd[1] - v_local[1]
    ex1 = v_cmd[0] - v_ref[0]
    ey1 = v_cmd[1] - v_ref[1]
    ew = v_cmd[2] - omega_z
    return math.sqrt(ex0 * ex0 + ey0 * ey0 + ex1 * ex1 + ey1 * ey1 + ew * ew)


def velocity_reward(v_cmd, v_local, v_ref, omega_z, c_vel: float, weights: RewardWeights) -> float:
    e = velocity_error(v_cmd, v_local, v_ref, omega_z)
    return c_vel * kernel_eval(e, weights.l_vel) * weights.dt


def pose_regularization_reward(q_reg, q_current, weights: RewardWeights) -> float:
    q_reg = np.asarray(q_reg, dtype=np.float64)
    q_current = np.asarray(q_current, dtype=np.float64)
    if q_reg.shape != q_current.shape:
        raise ConfigurationError(
            f"regularised joint subset length mismatch: {q_reg.shape} vs {q_current.shape}")
    e = float(np.linalg.norm(q_reg - q_current)) if q_reg.size else 0.0
    return kernel_eval(e, weights.l_reg) * weights.dt


def alive_reward_and_termination(height: float, roll: float, pitch: float,
                                 thresholds: AliveThresholds, dt: float) -> tuple[float, bool]:
    ok = (height > thresholds.min_height and abs(roll) < thresholds.max_roll
          and abs(pitch) < thresholds.max_pitch)
    return (dt, False) if ok else (0.0, True)


def foot_clearance_error(foot: FootState, weights: RewardWeights) -> float:
    if foot.swing == RIGHT:
        sw_h, sw_r, st_h, st_r = foot.right_height, foot.right_roll, foot.left_height, foot.left_roll
    else:
        sw_h, sw_r, st_h, st_r = foot.left_height, foot.left_roll, foot.right_height, foot.right_roll
    w = weights.w_phi
    e0 = w * (weights.foot_clearance - sw_h)
    e3 = w * st_h
    return math.sqrt(e0 * e0 + sw_r * sw_r + st_r * st_r + e3 * e3)


def foot_clearance_reward(foot: FootState, c_foot: float, weights: RewardWeights) -> float:
    return c_foot * kernel_eval(foot_clearance_error(foot, weights), weights.l_foot) * weights.dt


def resolve_swing_leg(left_to_trunk: float, right_to_trunk: float, previous: str,
                      margin: float) -> str:
    """Pick the leg whose foot is closest to the trunk along z, with hysteresis.

    The incumbent keeps the role unless the other foot is closer by more than
    ``margin``; ties go to the incumbent.
    """
    dl, dr = abs(left_to_trunk), abs(right_to_trunk)
    if previous == LEFT:
        return RIGHT if dl - dr > margin else LEFT
    return LEFT if dr - dl > margin else RIGHT


@dataclass
class RewardInputs:
    """Everything one control step needs to evaluate the reward."""

    v_cmd: np.ndarray
    v_local: np.ndarray
    v_ref: np.ndarray
    omega_z: float
    q_reg: np.ndarray
    q_reg_current: np.ndarray
    height: float
    roll: float
    pitch: float
    foot: FootState | None  # None for bodies without feet (zero clearance error)


@dataclass
class RewardTerms:
    vel: float
    reg: float
    alive: float
    foot: float
    total: float
    terminate: bool
    k_vel: float  # raw tracking kernel value, for diagnostics


def total_reward(inputs: RewardInputs, weights: RewardWeights, thresholds: AliveThresholds,
                 c_vel: float, c_foot: float) -> RewardTerms:
    e_v = velocity_error(inputs.v_cmd, inputs.v_local, inputs.v_ref, inputs.omega_z)
    k_vel = kernel_eval(e_v, weights.l_vel)
    r_vel = c_vel * k_vel * weights.dt
    r_reg = pose_regularization_reward(inputs.q_reg, inputs.q_reg_current, weights)
    r_alive, term = alive_reward_and_termination(inputs.height, inputs.roll, inputs.pitch,
                                                 thresholds, weights.dt)
    if inputs.foot is None:
        r_foot = c_foot * weights.dt
    else:
        r_foot = foot_clearance_reward(inputs.foot, c_foot, weights)
    total = (weights.w_vel * r_vel + weights.w_reg * r_reg + weights.w_alive * r_alive
             + weights.w_foot * r_foot)
    return RewardTerms(r_vel, r_reg, r_alive, r_foot, total, term, k_vel)
