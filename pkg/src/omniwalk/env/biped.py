"""Planar biped environment on top of :mod:`omniwalk.env.planar`."""

from __future__ import annotations

import math

import numpy as np

from ..curriculum import SchedulerConfig
from ..reward import RIGHT, FootState, resolve_swing_leg
from . import planar
from .base import (
    SIM_DT,
    LocomotionEnv,
    Measurement,
    ReferenceFrame,
    SimulationFault,
    express_velocity,
)
from .description import (
    ROBOT_OPTIONAL,
    ROBOT_REQUIRED,
    Description,
    load_description,
    robot_config,
)

BODY_KEYS = ("trunk_mass", "trunk_inertia", "trunk_com", "trunk_height", "thigh_mass",
             "thigh_inertia", "thigh_length", "shin_mass", "shin_inertia", "shin_length",
             "foot_mass", "foot_inertia", "foot_com", "heel", "toe", "armature")
CONTACT_KEYS = ("stiffness", "damping", "tangential_damping", "limit_stiffness",
                "limit_damping", "joint_damping", "gravity")

TRUNK, THIGH_L, SHIN_L, FOOT_L, THIGH_R, SHIN_R, FOOT_R = range(7)
# contact point indices: heel/toe per foot come first
HEEL_L, TOE_L, HEEL_R, TOE_R = range(4)
CONTACT_EPS = 0.002  # a sole point below this height counts as touching


def build_model(body: dict) -> planar.PlanarModel:
    lt, ls = body["thigh_length"], body["shin_length"]
    parent = [-1, 0, 1, 2, 0, 4, 5]
    offset = [[0, 0], [0, 0], [0, -lt], [0, -ls], [0, 0], [0, -lt], [0, -ls]]
    leg_com = [[0, -lt / 2], [0, -ls / 2], body["foot_com"]]
    com = [body["trunk_com"]] + leg_com + leg_com
    leg_m = [body["thigh_mass"], body["shin_mass"], body["foot_mass"]]
    leg_i = [body["thigh_inertia"], body["shin_inertia"], body["foot_inertia"]]
    mass = [body["trunk_mass"]] + leg_m + leg_m
    inertia = [body["trunk_inertia"]] + leg_i + leg_i
    heel, toe = body["heel"], body["toe"]
    contact_link = [FOOT_L, FOOT_L, FOOT_R, FOOT_R, SHIN_L, SHIN_R, TRUNK, TRUNK]
    contact_local = [heel, toe, heel, toe, [0, 0], [0, 0], [0, 0], [0, body["trunk_height"]]]
    return planar.PlanarModel(parent, offset, com, mass, inertia,
                              np.full(6, float(body["armature"])), contact_link, contact_local)


def contact_params(contact: dict, mu: float) -> np.ndarray:
    p = np.zeros(8)
    p[planar.P_G] = contact["gravity"]
    p[planar.P_KN] = contact["stiffness"]
    p[planar.P_DN] = contact["damping"]
    p[planar.P_CT] = contact["tangential_damping"]
    p[planar.P_MU] = mu
    p[planar.P_KLIM] = contact["limit_stiffness"]
    p[planar.P_DLIM] = contact["limit_damping"]
    p[planar.P_JDAMP] = contact["joint_damping"]
    return p


class PlanarWorld:
    """State ``(y, p)`` of the planar chain plus stepping and read-out helpers."""

    def __init__(self, model: planar.PlanarModel, params: np.ndarray,
                 lower: np.ndarray, upper: np.ndarray):
        self.model = model
        self.params = params.copy()
        self.lower = lower
        self.upper = upper
        self.y = np.zeros(9)
        self.p = np.zeros(9)
        self.contact = np.zeros((len(model.contact_link), 4))
        self._arrays = model.arrays()

    @property
    def total_mass(self) -> float:
        return self.model.total_mass

    def place(self, theta: float, joints, height_gap: float = 0.0) -> None:
        """Pose at rest with the lowest contact point ``height_gap`` above ground."""
        m = self.model
        j = np.asarray(joints, dtype=np.float64)
        phi, o, c = planar.link_kinematics(0.0, 0.0, theta, j, m.parent, m.offset, m.com)
        zmin = min(self._point(k, phi, o)[1] for k in range(len(m.contact_link)))
        rcx, rcz = planar.com_position(c, m.mass)
        self.y[:] = 0.0
        self.y[0] = rcx
        self.y[1] = rcz - zmin + height_gap
        self.y[2] = theta
        self.y[3:] = j
        self.p[:] = 0.0

    def _point(self, k, phi, o):
        m = self.model
        li = m.contact_link[k]
        lx, lz = m.contact_local[k]
        cph, sph = math.cos(phi[li]), math.sin(phi[li])
        return o[li, 0] + cph * lx - sph * lz, o[li, 1] + sph * lx + cph * lz

    def step(self, q_d, kp, kd, tau_lim, nsub: int, use_pd: bool = True, dt: float = SIM_DT) -> bool:
        return planar.simulate(self.y, self.p, np.asarray(q_d, dtype=np.float64), kp, kd, tau_lim,
                               use_pd, self.lower, self.upper, self.params, dt, nsub,
                               *self._arrays, self.contact)

    def state(self):
        """Velocities and kinematics at the current configuration."""
        m = self.model
        return planar.velocities(self.y, self.p, m.parent, m.offset, m.com, m.mass, m.inertia,
                                 m.armature, m.anc)

    def base_position(self) -> tuple[float, float]:
        m = self.model
        return planar.base_from_com(self.y[:2], self.y[2], self.y[3:], m.parent, m.offset,
                                    m.com, m.mass)

    def contact_points(self) -> np.ndarray:
        m = self.model
        phi, o, _ = planar.configure(self.y, m.parent, m.offset, m.com, m.mass)
        return np.array([self._point(k, phi, o) for k in range(len(m.contact_link))])

    def energy(self) -> float:
        """Kinetic + gravitational + contact-spring + joint-limit-spring energy."""
        m = self.model
        _, _, w, _, _, _, _, _, _ = self.state()
        M = self.total_mass
        g = self.params[planar.P_G]
        kin = 0.5 * (self.p[0] ** 2 + self.p[1] ** 2) / M + 0.5 * float(self.p[2:] @ w)
        pot = M * g * self.y[1]
        pen = np.minimum(self.contact_points()[:, 1], 0.0)
        pot += 0.5 * self.params[planar.P_KN] * float(pen @ pen)
        j = self.y[3:]
        over = np.maximum(j - self.upper, 0.0) + np.minimum(j - self.lower, 0.0)
        pot += 0.5 * self.params[planar.P_KLIM] * float(over @ over)
        return kin + pot

    def angular_momentum(self) -> float:
        """Angular momentum about the COM, recomputed from link velocities."""
        m = self.model
        vcx, vcz, w, _, _, phi, o, c, _ = self.state()
        rc = self.y[:2]
        _, abar = planar.relative_inertia(c, o, m.mass, m.inertia, m.armature, m.anc)
        L = 0.0
        for i in range(len(m.mass)):
            A = planar.point_jacobian(c[i, 0], c[i, 1], i, o, m.anc)
            omega = float(w[m.anc[i]].sum())
            vi = np.array([vcx, vcz]) + (A - abar) @ w
            r = c[i] - rc
            L += m.inertia[i] * omega + m.mass[i] * (r[0] * vi[1] - r[1] * vi[0])
        return L

    def linear_momentum(self) -> np.ndarray:
        return self.p[:2].copy()


def estimate_base_velocity(point, link: int, o, anc, w, frame: ReferenceFrame, pitch: float):
    """Flat-ground estimate: the stance point is at rest, so the base moves at
    minus the point's velocity relative to the base. Returns ``(v_ref, v_local)``."""
    A = planar.point_jacobian(point[0], point[1], link, o, anc)
    rel = A @ w
    v_world = np.array([-rel[0], 0.0, -rel[1]])
    return express_velocity(v_world, frame, 0.0, pitch, 0.0)


def default_biped_scheduler() -> SchedulerConfig:
    """Sagittal-only command box: the planar body cannot track lateral or yaw commands."""
    return SchedulerConfig(final_lo=[-0.6, 0.0, 0.0], final_hi=[0.6, 0.0, 0.0])


class BipedEnv(LocomotionEnv):
    name = "biped"

    def __init__(self, description: Description | str = "biped", swing_hysteresis: float = 0.01,
                 **kwargs):
        desc = description if isinstance(description, Description) else load_description(description)
        body = desc.require("body", BODY_KEYS)
        contact = desc.require("contact", CONTACT_KEYS)
        self.model = build_model(body)
        self.contact_cfg = contact
        # nominal base height: stand the nominal pose on the ground
        r = desc.require("robot", ROBOT_REQUIRED, ROBOT_OPTIONAL)
        lo = np.asarray(r["joint_lower"], dtype=np.float64)
        hi = np.asarray(r["joint_upper"], dtype=np.float64)
        self.world = PlanarWorld(self.model, contact_params(contact, 0.6), lo, hi)
        self.world.place(0.0, r["nominal_pose"])
        self.nominal_height = self.world.base_position()[1]
        robot = robot_config(desc, self.nominal_height)
        kwargs.setdefault("scheduler", default_biped_scheduler())
        super().__init__(robot, **kwargs)
        self.swing = RIGHT
        self.swing_hysteresis = float(swing_hysteresis)
        self._est = (np.zeros(2), np.zeros(2))

    def _reset_world(self, q0):
        self.world.params[planar.P_MU] = self.randomization.mu_tangential
        self.world.place(0.0, q0)
        self.swing = RIGHT
        self._est = (np.zeros(2), np.zeros(2))

    def _simulate(self, q_d):
        r = self.robot
        ok = self.world.step(q_d, r.kp, r.kd, r.torque_limit, self.substeps)
        if not ok:
            raise SimulationFault("non-finite biped state")

    def joint_positions(self):
        return self.world.y[3:].copy()

    def _base_pose(self):
        bx, bz = self.world.base_position()
        return np.array([bx, 0.0, bz]), 0.0

    def _measure(self) -> Measurement:
        vcx, vcz, w, bvx, bvz, phi, o, c, _ = self.world.state()
        if not np.all(np.isfinite(w)):
            return Measurement(np.zeros(6), np.zeros(6), np.zeros(1), np.zeros(3), np.zeros(2),
                               np.zeros(2), 0.0, 0.0, 0.0, None, fault=True)
        theta = self.world.y[2]
        pitch = -theta  # nose-down positive about +y
        pts = self.world.contact_points()
        hl = min(pts[HEEL_L, 1], pts[TOE_L, 1])
        hr = min(pts[HEEL_R, 1], pts[TOE_R, 1])
        base_z = o[TRUNK, 1]
        self.swing = resolve_swing_leg(base_z - hl, base_z - hr, self.swing,
                                       self.swing_hysteresis)
        foot = FootState(float(max(hl, 0.0)), float(max(hr, 0.0)), 0.0, 0.0, self.swing)
        # stance leg: the non-swing side, its lowest sole point
        if self.swing == RIGHT:
            k = HEEL_L if pts[HEEL_L, 1] <= pts[TOE_L, 1] else TOE_L
            link, h_st = FOOT_L, hl
        else:
            k = HEEL_R if pts[HEEL_R, 1] <= pts[TOE_R, 1] else TOE_R
            link, h_st = FOOT_R, hr
        flight = bool(min(hl, hr) > CONTACT_EPS)
        if not flight:
            if h_st > CONTACT_EPS:  # swing foot is the one on the ground
                k = (HEEL_R if pts[HEEL_R, 1] <= pts[TOE_R, 1] else TOE_R) if link == FOOT_L \
                    else (HEEL_L if pts[HEEL_L, 1] <= pts[TOE_L, 1] else TOE_L)
                link = FOOT_R if link == FOOT_L else FOOT_L
            self._est = estimate_base_velocity(pts[k], link, o, self.model.anc, w,
                                               self.frame, pitch)
        v_ref, v_local = self._est
        true_ref, true_local = express_velocity(np.array([bvx, 0.0, bvz]), self.frame,
                                                0.0, pitch, 0.0)
        return Measurement(
            q=self.world.y[3:].copy(), qd=w[1:].copy(), orientation=np.array([pitch]),
            omega=np.array([0.0, -w[0], 0.0]), v_ref=v_ref.copy(), v_local=v_local.copy(),
            height=float(base_z), roll=0.0, pitch=float(pitch), foot=foot, flight=flight,
            true_v_ref=true_ref, true_v_local=true_local,
        )

    def _world_state(self):
        return {"y": self.world.y.tolist(), "p": self.world.p.tolist(), "swing": self.swing,
                "mu": float(self.world.params[planar.P_MU]),
                "est": [self._est[0].tolist(), self._est[1].tolist()]}

    def _set_world_state(self, st):
        self.world.y[:] = st["y"]
        self.world.p[:] = st["p"]
        self.world.params[planar.P_MU] = st["mu"]
        self.swing = st["swing"]
        self._est = (np.array(st["est"][0]), np.array(st["est"][1]))

