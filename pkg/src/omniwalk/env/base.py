"""Environment plumbing shared by the built-in robots.

The control pipeline per policy step is::

    unit action -> delta in [lo, hi] -> (filter) -> PD-scale noise -> q_d = q + delta
    -> N substeps of PD control + physics -> observation (noise, latency)

Subclasses supply the physics through ``_simulate``, ``_measure`` and
``_reset_world``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..curriculum import (
    CommandState,
    EpisodeCounter,
    SchedulerConfig,
    bounds_at,
    sample_target,
    step_command,
)
from ..mathkit import ConfigurationError, RngStream, scale_unit_to_bounds
from ..reward import AliveThresholds, FootState, RewardInputs
from ..sim2real import (
    ACCEL,
    COMMAND,
    ENCODER,
    GYRO,
    VELOCITY,
    EpisodeRandomization,
    LatencyBuffer,
    TransferConfig,
    apply_pd_noise,
    filter_action,
    make_action_filter,
    noise_std_vector,
    sample_episode_randomization,
)

CONTROL_DT = 0.025
SIM_DT = 0.001


class CompositionError(ValueError):
    pass


class SimulationFault(RuntimeError):
    pass


@dataclass
class RobotConfig:
    n_joints: int
    joint_lower: np.ndarray
    joint_upper: np.ndarray
    velocity_limit: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    torque_limit: np.ndarray
    nominal_pose: np.ndarray
    action_lo: float = -0.1
    action_hi: float = 0.1
    orientation_dims: int = 2
    regularized: tuple[int, ...] | None = None  # joint indices; None = all
    min_height: float = 0.3
    max_roll: float = 0.5
    max_pitch: float = 0.5
    q_scale: np.ndarray | None = None  # observation scale for joint positions

    def __post_init__(self):
        n = self.n_joints
        for name in ("joint_lower", "joint_upper", "velocity_limit", "kp", "kd",
                     "torque_limit", "nominal_pose"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=np.float64), (n,)).copy()
            setattr(self, name, arr)
        if np.any(self.joint_lower >= self.joint_upper):
            raise ConfigurationError("joint limits must satisfy lower < upper")
        if np.any(self.nominal_pose < self.joint_lower) or np.any(self.nominal_pose > self.joint_upper):
            raise ConfigurationError("nominal pose must lie within the joint limits")
        if not self.action_lo < self.action_hi:
            raise ConfigurationError("action bounds must satisfy lo < hi")
        if self.orientation_dims not in (1, 2, 3):
            raise ConfigurationError("orientation dimensionality must be 1, 2 or 3")
        if self.regularized is None:
            self.regularized = tuple(range(n))
        self.regularized = tuple(int(i) for i in self.regularized)
        if self.q_scale is None:
            self.q_scale = np.full(n, math.pi)
        self.q_scale = np.broadcast_to(np.asarray(self.q_scale, dtype=np.float64), (n,)).copy()

    @property
    def alive_thresholds(self) -> AliveThresholds:
        return AliveThresholds(self.min_height, self.max_roll, self.max_pitch)


SEGMENTS = ("q", "qd", "R", "omega", "v_ref", "v_local", "v_des", "v_cmd")
SEGMENT_ROLES = {"q": ENCODER, "qd": VELOCITY, "R": ACCEL, "omega": GYRO, "v_ref": VELOCITY,
                 "v_local": VELOCITY, "v_des": COMMAND, "v_cmd": COMMAND}


@dataclass(frozen=True)
class ObservationLayout:
    n_joints: int
    orientation_dims: int

    @property
    def widths(self) -> dict[str, int]:
        n = self.n_joints
        return {"q": n, "qd": n, "R": self.orientation_dims, "omega": 3, "v_ref": 2,
                "v_local": 2, "v_des": 3, "v_cmd": 3}

    @property
    def width(self) -> int:
        return 2 * self.n_joints + self.orientation_dims + 13

    def slices(self) -> dict[str, slice]:
        out, off = {}, 0
        for name in SEGMENTS:
            w = self.widths[name]
            out[name] = slice(off, off + w)
            off += w
        return out

    def roles(self) -> list[str]:
        roles = []
        for name in SEGMENTS:
            roles += [SEGMENT_ROLES[name]] * self.widths[name]
        return roles


def compose_observation(layout: ObservationLayout, segments: dict) -> np.ndarray:
    parts = []
    widths = layout.widths
    for name in SEGMENTS:
        if name not in segments or segments[name] is None:
            raise CompositionError(f"observation segment {name!r} is missing")
        seg = np.asarray(segments[name], dtype=np.float64).reshape(-1)
        if seg.size != widths[name]:
            raise CompositionError(f"segment {name!r} has width {seg.size}, expected {widths[name]}")
        parts.append(seg)
    return np.concatenate(parts)


def pd_torque(q_d, q, qd, kp, kd, limit) -> np.ndarray:
    """``clip(kp (q_d - q) - kd qd, -limit, limit)`` per joint."""
    tau = np.asarray(kp) * (np.asarray(q_d) - np.asarray(q)) - np.asarray(kd) * np.asarray(qd)
    return np.clip(tau, -np.asarray(limit), np.asarray(limit))


# ---------------------------------------------------------------------------
# reference frame


@dataclass
class ReferenceFrame:
    """Gravity-aligned frame anchored at the base, re-anchored periodically."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0
    last_update: float = 0.0
    period: float = 1.0

    def copy(self) -> "ReferenceFrame":
        return ReferenceFrame(self.position.copy(), self.yaw, self.last_update, self.period)


def update_reference_frame(frame: ReferenceFrame, base_position, base_yaw: float,
                           now: float, force: bool = False) -> ReferenceFrame:
    if force or now - frame.last_update >= frame.period - 1e-9:
        return ReferenceFrame(np.array(base_position, dtype=np.float64), float(base_yaw),
                              float(now), frame.period)
    return frame


def rotation_zyx(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def express_velocity(v_world, frame: ReferenceFrame, roll: float, pitch: float, yaw: float):
    """Base linear velocity in frame I (``v_ref``) and in the base frame (``v_local``)."""
    v = np.asarray(v_world, dtype=np.float64)
    c, s = math.cos(frame.yaw), math.sin(frame.yaw)
    v_ref = np.array([c * v[0] + s * v[1], -s * v[0] + c * v[1]])
    v_local = rotation_zyx(roll, pitch, yaw).T @ v
    return v_ref, v_local[:2].copy()


# ---------------------------------------------------------------------------
# environment base


@dataclass
class StepResult:
    observation: np.ndarray
    reward_inputs: RewardInputs
    done: bool
    truncated: bool
    info: dict


@dataclass
class Measurement:
    """Noise-free state read-out after a control step."""

    q: np.ndarray
    qd: np.ndarray
    orientation: np.ndarray  # first ``orientation_dims`` of (roll, pitch, yaw)-style angles
    omega: np.ndarray  # gyro, base frame
    v_ref: np.ndarray
    v_local: np.ndarray
    height: float
    roll: float
    pitch: float
    foot: FootState | None
    fault: bool = False
    flight: bool = False  # no stance contact: velocity estimate held
    true_v_ref: np.ndarray | None = None  # ground truth for the reward; None = use estimate
    true_v_local: np.ndarray | None = None


class LocomotionEnv:
    """Base class implementing the per-step control and observation pipeline."""

    name = "base"

    def __init__(self, robot: RobotConfig, scheduler: SchedulerConfig | None = None,
                 transfer: TransferConfig | None = None, counter: EpisodeCounter | None = None,
                 rng: RngStream | int = 0, max_episode_steps: int = 400,
                 init_noise: float = 0.03, frame_period: float = 1.0):
        self.robot = robot
        self.scheduler = scheduler or SchedulerConfig()
        self.transfer = transfer
        self.counter = counter or EpisodeCounter()
        rng = rng if isinstance(rng, RngStream) else RngStream(rng)
        # separate streams so switching transfer aids on/off never shifts the others
        self.rng_reset, self.rng_rand, self.rng_noise = rng.spawn(3)
        self.max_episode_steps = int(max_episode_steps)
        self.init_noise = float(init_noise)
        self.layout = ObservationLayout(robot.n_joints, robot.orientation_dims)
        self.slices = self.layout.slices()
        self.roles = self.layout.roles()
        self.frame = ReferenceFrame(period=frame_period)
        self.action_lo = np.full(robot.n_joints, robot.action_lo)
        self.action_hi = np.full(robot.n_joints, robot.action_hi)
        self.substeps = int(round(CONTROL_DT / SIM_DT))
        self.alive_thresholds = robot.alive_thresholds
        self.reg_idx = np.array(robot.regularized, dtype=np.intp)
        self._noise_std = None
        self.filter = None
        self.latency_buffer = None
        if transfer is not None:
            if transfer.sensor_noise:
                self._noise_std = noise_std_vector(self.roles, transfer.noise)
                self._noise_mask = self._noise_std > 0
            if transfer.action_filter:
                self.filter = make_action_filter(robot.n_joints, transfer.filter_cutoff_hz,
                                                 1.0 / CONTROL_DT)
            max_lat = max(transfer.latency.range[1], transfer.fixed_latency or 0.0)
            if transfer.randomize_latency or transfer.fixed_latency:
                self.latency_buffer = LatencyBuffer(CONTROL_DT, max_lat)
        self.command_mask = np.array([r == COMMAND for r in self.roles])
        self.randomization = self._nominal_randomization()
        self.command = CommandState(np.zeros(3), np.zeros(3), 1.0, self.scheduler.transition_duration)
        self.v_des = np.zeros(3)
        self.time = 0.0
        self.steps = 0
        self.episode = -1
        self.fault_count = 0
        self.flight_count = 0
        self.last_measurement: Measurement | None = None

    # -- physics hooks -----------------------------------------------------
    default_mu_tangential = 0.6
    default_mu_torsional = 0.2

    def _reset_world(self, q0: np.ndarray) -> None:
        raise NotImplementedError

    def _simulate(self, q_d: np.ndarray) -> None:
        raise NotImplementedError

    def _measure(self) -> Measurement:
        raise NotImplementedError

    def _base_pose(self) -> tuple[np.ndarray, float]:
        """World base position and heading used to anchor the reference frame."""
        raise NotImplementedError

    def joint_positions(self) -> np.ndarray:
        raise NotImplementedError

    def _on_reanchor(self, old: ReferenceFrame) -> None:
        """Called after frame I moved; states expressed in I are converted here."""

    # -- observation scaling ---------------------------------------------
    def observation_normalizer(self) -> tuple[np.ndarray, np.ndarray]:
        """Fixed ``(offset, scale)``; the network sees ``(obs - offset) / scale``."""
        r = self.robot
        s = self.slices
        vmax = float(max(np.max(np.abs(self.scheduler.final_lo)), np.max(np.abs(self.scheduler.final_hi)), 0.1))
        offset = np.zeros(self.layout.width)
        scale = np.ones(self.layout.width)
        offset[s["q"]] = r.nominal_pose
        scale[s["q"]] = r.q_scale
        scale[s["qd"]] = r.velocity_limit
        scale[s["R"]] = math.pi / 2
        scale[s["omega"]] = 2.0 * vmax
        for k in ("v_ref", "v_local"):
            scale[s[k]] = 2.0 * vmax
        scale[s["v_des"]] = vmax
        scale[s["v_cmd"]] = vmax
        return offset, scale

    @property
    def obs_dim(self) -> int:
        return self.layout.width

    @property
    def action_dim(self) -> int:
        return self.robot.n_joints

    # -- lifecycle ---------------------------------------------------------
    def _nominal_randomization(self) -> EpisodeRandomization:
        lat = 0.0
        if self.transfer is not None and self.transfer.fixed_latency:
            lat = float(self.transfer.fixed_latency)
        return EpisodeRandomization(np.ones(self.robot.n_joints), self.default_mu_tangential,
                                    self.default_mu_torsional, lat)

    def _sample_randomization(self) -> EpisodeRandomization:
        t = self.transfer
        nominal = self._nominal_randomization()
        if t is None or not (t.pd_noise or t.randomize_friction or t.randomize_latency):
            return nominal
        s = sample_episode_randomization(t.noise, t.friction, t.latency, self.robot.n_joints,
                                         self.rng_rand)
        return EpisodeRandomization(
            s.pd_scales if t.pd_noise else nominal.pd_scales,
            s.mu_tangential if t.randomize_friction else nominal.mu_tangential,
            s.mu_torsional if t.randomize_friction else nominal.mu_torsional,
            (t.fixed_latency if t.fixed_latency else s.latency) if t.randomize_latency
            else nominal.latency,
        )

    def reset(self, v_des=None) -> np.ndarray:
        """Start a new episode. ``v_des`` overrides the curriculum sample (evaluation)."""
        self.episode = self.counter.next()
        bounds = bounds_at(self.scheduler, self.episode)
        sampled = sample_target(bounds, self.rng_reset)
        self.v_des = sampled if v_des is None else np.asarray(v_des, dtype=np.float64)
        self.command = CommandState(np.zeros(3), self.v_des, 0.0, self.scheduler.transition_duration)
        self.randomization = self._sample_randomization()
        r = self.robot
        noise = self.rng_reset.uniform(-self.init_noise, self.init_noise, r.n_joints) \
            if self.init_noise > 0 else np.zeros(r.n_joints)
        q0 = np.clip(r.nominal_pose + noise, r.joint_lower, r.joint_upper)
        self.time = 0.0
        self.steps = 0
        self._reset_world(q0)
        pos, yaw = self._base_pose()
        self.frame = update_reference_frame(self.frame, pos, yaw, 0.0, force=True)
        if self.filter is not None:
            self.filter.reset()
        m = self._measure()
        self.last_measurement = m
        obs = self._observe(m, prefill=True)
        return obs

    def set_command(self, v_des) -> None:
        """Scripted target change: ramp from the current command to ``v_des``."""
        self.v_des = np.asarray(v_des, dtype=np.float64)
        self.command.retarget(self.v_des)

    def action_to_delta(self, action_unit) -> np.ndarray:
        u = np.clip(np.asarray(action_unit, dtype=np.float64), 0.0, 1.0)
        return scale_unit_to_bounds(u, self.action_lo, self.action_hi)

    def step(self, action_unit) -> StepResult:
        delta = self.action_to_delta(action_unit)
        delta = filter_action(self.filter, delta)
        delta = np.clip(apply_pd_noise(delta, self.randomization.pd_scales),
                        self.action_lo, self.action_hi)
        q_d = self.joint_positions() + delta
        fault = False
        try:
            self._simulate(q_d)
        except SimulationFault:
            fault = True
        self.steps += 1
        self.time = self.steps * CONTROL_DT
        v_cmd = step_command(self.command, CONTROL_DT)
        if not fault:
            pos, yaw = self._base_pose()
            old = self.frame
            self.frame = update_reference_frame(old, pos, yaw, self.time)
            if self.frame is not old:
                self._on_reanchor(old)
            m = self._measure()
            fault = m.fault
        if fault:
            self.fault_count += 1
            m = self.last_measurement
        self.last_measurement = m
        r = self.robot
        if m.flight:
            self.flight_count += 1
        v_loc = m.v_local if m.true_v_local is None else m.true_v_local
        v_ref = m.v_ref if m.true_v_ref is None else m.true_v_ref
        inputs = RewardInputs(v_cmd, v_loc, v_ref, float(m.omega[2]),
                              r.nominal_pose[self.reg_idx], m.q[self.reg_idx],
                              m.height, m.roll, m.pitch, m.foot)
        th = self.alive_thresholds
        fell = not (m.height > th.min_height and abs(m.roll) < th.max_roll
                    and abs(m.pitch) < th.max_pitch)
        done = fell or fault
        truncated = (not done) and self.steps >= self.max_episode_steps
        obs = self._observe(m)
        return StepResult(obs, inputs, done, truncated,
                          {"fault": fault, "fell": fell, "flight": m.flight})

    def _observe(self, m: Measurement, prefill: bool = False) -> np.ndarray:
        seg = {"q": m.q, "qd": m.qd, "R": m.orientation, "omega": m.omega,
               "v_ref": m.v_ref, "v_local": m.v_local, "v_des": self.v_des,
               "v_cmd": self.command.current()}
        obs = compose_observation(self.layout, seg)
        if self._noise_std is not None:
            obs = obs + self._noise_std * self.rng_noise.normal(0.0, 1.0, obs.size)
        buf = self.latency_buffer
        if buf is not None:
            buf.latency = self.randomization.latency
            if prefill:
                buf.prefill(self.time, obs)
            else:
                buf.record(self.time, obs)
            delayed = buf.delayed(self.time)
            if delayed is not obs:
                obs = np.where(self.command_mask, obs, delayed)
        return obs

    # -- checkpoint support -----------------------------------------------
    def get_state(self) -> dict:
        st = {
            "rng": [self.rng_reset.get_state(), self.rng_rand.get_state(), self.rng_noise.get_state()],
            "command": [self.command.v_old.tolist(), self.command.v_new.tolist(),
                        self.command.progress, self.command.duration],
            "v_des": self.v_des.tolist(),
            "time": self.time, "steps": self.steps, "episode": self.episode,
            "frame": [self.frame.position.tolist(), self.frame.yaw, self.frame.last_update],
            "rand": [self.randomization.pd_scales.tolist(), self.randomization.mu_tangential,
                     self.randomization.mu_torsional, self.randomization.latency],
            "world": self._world_state(),
            "last": _measurement_to_dict(self.last_measurement),
        }
        if self.filter is not None:
            st["filter"] = [self.filter.x_hist.tolist(), self.filter.y_hist.tolist()]
        if self.latency_buffer is not None:
            st["latency"] = [list(self.latency_buffer.times),
                             [v.tolist() for v in self.latency_buffer.values]]
        return st

    def set_state(self, st: dict) -> None:
        for stream, s in zip((self.rng_reset, self.rng_rand, self.rng_noise), st["rng"]):
            stream.set_state(s)
        vo, vn, prog, dur = st["command"]
        self.command = CommandState(np.array(vo), np.array(vn), prog, dur)
        self.v_des = np.array(st["v_des"])
        self.time, self.steps, self.episode = st["time"], st["steps"], st["episode"]
        pos, yaw, last = st["frame"]
        self.frame = ReferenceFrame(np.array(pos), yaw, last, self.frame.period)
        sc, mt, mz, lat = st["rand"]
        self.randomization = EpisodeRandomization(np.array(sc), mt, mz, lat)
        self._set_world_state(st["world"])
        self.last_measurement = _measurement_from_dict(st["last"])
        if self.filter is not None:
            self.filter.x_hist[:] = np.array(st["filter"][0])
            self.filter.y_hist[:] = np.array(st["filter"][1])
        if self.latency_buffer is not None:
            self.latency_buffer.clear()
            for t, v in zip(*st["latency"]):
                self.latency_buffer.record(t, np.array(v))

    def _world_state(self) -> dict:
        raise NotImplementedError

    def _set_world_state(self, st: dict) -> None:
        raise NotImplementedError


def _measurement_to_dict(m: Measurement | None):
    if m is None:
        return None
    d = {k: _plain(v) for k, v in m.__dict__.items() if k != "foot"}
    d["foot"] = None if m.foot is None else {k: _plain(v) for k, v in m.foot.__dict__.items()}
    return d


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return v


def _measurement_from_dict(d):
    if d is None:
        return None
    d = dict(d)
    foot = d.pop("foot")
    arrays = {k: np.array(v) if isinstance(v, list) else v for k, v in d.items()}
    return Measurement(**arrays, foot=None if foot is None else FootState(**foot))
