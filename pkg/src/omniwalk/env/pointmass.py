"""Omnidirectional point-mass environment.

A rigid disc sliding on flat ground with three virtual joints: position x, y
and yaw, all measured in the reference frame I. PD forces act along the axes
of I. Traction is limited by ``mu_t m g`` and yaw torque by ``mu_z m g r``,
so the sampled friction coefficients matter. There are no feet, the height is
fixed and the body never falls.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .base import SIM_DT, LocomotionEnv, Measurement
from .description import (
    ROBOT_OPTIONAL,
    ROBOT_REQUIRED,
    Description,
    load_description,
    robot_config,
)
from .planar import pd_law

BODY_KEYS = ("mass", "yaw_inertia", "height", "contact_radius", "frame_period", "gravity")


@njit(cache=True)
def simulate_disc(q, qd, q_d, kp, kd, tau_lim, mass, inertia, f_max, t_max, dt, nsub):
    """Advance the frame-I coordinates ``q = (x, y, yaw)`` in place."""
    for _ in range(nsub):
        f = pd_law(q_d, q, qd, kp, kd, tau_lim)
        fn = math.sqrt(f[0] * f[0] + f[1] * f[1])
        if fn > f_max:
            f[0] *= f_max / fn
            f[1] *= f_max / fn
        if f[2] > t_max:
            f[2] = t_max
        elif f[2] < -t_max:
            f[2] = -t_max
        qd[0] += dt * f[0] / mass
        qd[1] += dt * f[1] / mass
        qd[2] += dt * f[2] / inertia
        for k in range(3):
            q[k] += dt * qd[k]


class PointMassEnv(LocomotionEnv):
    name = "pointmass"

    def __init__(self, description: Description | str = "pointmass", **kwargs):
        desc = description if isinstance(description, Description) else load_description(description)
        body = desc.require("body", BODY_KEYS)
        desc.require("robot", ROBOT_REQUIRED, ROBOT_OPTIONAL)
        self.mass = float(body["mass"])
        self.inertia = float(body["yaw_inertia"])
        self.height = float(body["height"])
        self.radius = float(body["contact_radius"])
        self.gravity = float(body["gravity"])
        robot = robot_config(desc, self.height)
        kwargs.setdefault("frame_period", float(body["frame_period"]))
        super().__init__(robot, **kwargs)
        self.q = np.zeros(3)
        self.qd = np.zeros(3)

    # frame-I coordinates are the primary state; the world pose is derived
    def _world_pose(self):
        c, s = math.cos(self.frame.yaw), math.sin(self.frame.yaw)
        pos = self.frame.position[:2] + np.array([c * self.q[0] - s * self.q[1],
                                                  s * self.q[0] + c * self.q[1]])
        return pos, self.frame.yaw + self.q[2]

    def _reset_world(self, q0):
        # frame I is anchored at the base on reset, so the virtual joints start
        # at zero and the pose perturbation has no effect on this body
        self.frame.position = np.zeros(3)
        self.frame.yaw = 0.0
        self.q = np.zeros(3)
        self.qd = np.zeros(3)

    def _simulate(self, q_d):
        r = self.robot
        m = self.randomization
        f_max = m.mu_tangential * self.mass * self.gravity
        t_max = m.mu_torsional * self.mass * self.gravity * self.radius
        simulate_disc(self.q, self.qd, np.asarray(q_d, dtype=np.float64), r.kp, r.kd,
                      r.torque_limit, self.mass, self.inertia, f_max, t_max, SIM_DT,
                      self.substeps)

    def joint_positions(self):
        return self.q.copy()

    def _base_pose(self):
        pos, yaw = self._world_pose()
        return np.array([pos[0], pos[1], self.height]), yaw

    def _on_reanchor(self, old):
        dpsi = self.frame.yaw - old.yaw
        c, s = math.cos(dpsi), math.sin(dpsi)
        vx, vy = self.qd[0], self.qd[1]
        self.qd = np.array([c * vx + s * vy, -s * vx + c * vy, self.qd[2]])
        self.q = np.zeros(3)

    def _measure(self) -> Measurement:
        psi = self.q[2]
        c, s = math.cos(psi), math.sin(psi)
        v_ref = self.qd[:2].copy()
        v_local = np.array([c * v_ref[0] + s * v_ref[1], -s * v_ref[0] + c * v_ref[1]])
        return Measurement(q=self.q.copy(), qd=self.qd.copy(), orientation=np.array([psi]),
                           omega=np.array([0.0, 0.0, self.qd[2]]), v_ref=v_ref, v_local=v_local,
                           height=self.height, roll=0.0, pitch=0.0, foot=None)

    def _world_state(self):
        return {"q": self.q.tolist(), "qd": self.qd.tolist()}

    def _set_world_state(self, st):
        self.q = np.array(st["q"])
        self.qd = np.array(st["qd"])
