"""Planar floating-base chain dynamics.

Configuration: base (hip) position ``b = (x, z)``, trunk pitch ``theta``
(counter-clockwise in the x-z plane) and relative joint angles. Links form a
tree rooted at the trunk; link ``i`` rotates about its pivot ``o[i]`` with
absolute angle ``phi[i] = phi[parent] + j[i-1]``.

Two formulations live here:

* ``crba`` / ``rnea``: composite-rigid-body mass matrix and recursive
  Newton-Euler bias forces in the coordinates ``q = (x, z, theta, j)``,
  using planar spatial vectors ``(omega, v_x, v_z)``.
* the integrator, which works in centre-of-mass coordinates
  ``y = (r_com, theta, j)`` with momenta ``p = (M r_com_dot, M_rel w)``.
  The mass matrix is block diagonal there (``M I_2`` and ``M_rel``), so with
  no external forces the COM momentum and the pitch momentum (angular
  momentum about the COM) are updated by exactly zero and stay constant.

Update per substep (symplectic Euler in momentum form)::

    w = M_rel^-1 p_w;  Q = forces(y, w);  p += dt Q
    w+ = M_rel^-1 p_w;  y += dt (p_com / M, w+)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

N_LINKS = 7  # trunk, (thigh, shin, foot) x 2
N_DOF = 7  # pitch + 6 joints

# scalar parameter block layout
P_G, P_KN, P_DN, P_CT, P_MU, P_KLIM, P_DLIM, P_JDAMP = range(8)


@dataclass
class PlanarModel:
    parent: np.ndarray  # (7,) int, -1 for the trunk
    offset: np.ndarray  # (7, 2) pivot in the parent link frame
    com: np.ndarray  # (7, 2) centre of mass in the link frame
    mass: np.ndarray  # (7,)
    inertia: np.ndarray  # (7,) about the COM
    armature: np.ndarray  # (6,) reflected rotor inertia per joint
    contact_link: np.ndarray  # (K,) int
    contact_local: np.ndarray  # (K, 2)
    anc: np.ndarray = None  # (7, 7) anc[i, a]: DOF a moves link i

    def __post_init__(self):
        self.parent = np.asarray(self.parent, dtype=np.int64)
        self.offset = np.ascontiguousarray(self.offset, dtype=np.float64)
        self.com = np.ascontiguousarray(self.com, dtype=np.float64)
        self.mass = np.asarray(self.mass, dtype=np.float64)
        self.inertia = np.asarray(self.inertia, dtype=np.float64)
        self.armature = np.asarray(self.armature, dtype=np.float64)
        self.contact_link = np.asarray(self.contact_link, dtype=np.int64)
        self.contact_local = np.ascontiguousarray(self.contact_local, dtype=np.float64)
        n = len(self.parent)
        anc = np.zeros((n, n), dtype=np.bool_)
        for i in range(n):
            k = i
            while k >= 0:
                anc[i, k] = True
                k = self.parent[k]
        self.anc = anc

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    def arrays(self):
        return (self.parent, self.offset, self.com, self.mass, self.inertia, self.armature,
                self.contact_link, self.contact_local, self.anc)


# ---------------------------------------------------------------------------
# kinematics


@njit(cache=True)
def _rot(phi, rx, rz):
    c, s = math.cos(phi), math.sin(phi)
    return c * rx - s * rz, s * rx + c * rz


@njit(cache=True)
def link_kinematics(bx, bz, theta, j, parent, offset, com):
    n = parent.shape[0]
    phi = np.empty(n)
    o = np.empty((n, 2))
    c = np.empty((n, 2))
    for i in range(n):
        p = parent[i]
        if p < 0:
            phi[i] = theta
            o[i, 0] = bx
            o[i, 1] = bz
        else:
            phi[i] = phi[p] + j[i - 1]
            dx, dz = _rot(phi[p], offset[i, 0], offset[i, 1])
            o[i, 0] = o[p, 0] + dx
            o[i, 1] = o[p, 1] + dz
        dx, dz = _rot(phi[i], com[i, 0], com[i, 1])
        c[i, 0] = o[i, 0] + dx
        c[i, 1] = o[i, 1] + dz
    return phi, o, c


@njit(cache=True)
def point_jacobian(px, pz, link, o, anc):
    """d(point)/dw at fixed base, w = (theta_dot, j_dot)."""
    n = o.shape[0]
    A = np.zeros((2, n))
    for a in range(n):
        if anc[link, a]:
            A[0, a] = -(pz - o[a, 1])
            A[1, a] = px - o[a, 0]
    return A


# ---------------------------------------------------------------------------
# spatial algebra (planar: (omega, vx, vz)), composite rigid body, Newton-Euler


@njit(cache=True)
def plnr(theta, rx, rz):
    c, s = math.cos(theta), math.sin(theta)
    X = np.zeros((3, 3))
    X[0, 0] = 1.0
    X[1, 0] = s * rx - c * rz
    X[1, 1] = c
    X[1, 2] = s
    X[2, 0] = c * rx + s * rz
    X[2, 1] = -s
    X[2, 2] = c
    return X


@njit(cache=True)
def mcI(m, cx, cz, I):
    out = np.zeros((3, 3))
    out[0, 0] = I + m * (cx * cx + cz * cz)
    out[0, 1] = -m * cz
    out[0, 2] = m * cx
    out[1, 0] = -m * cz
    out[1, 1] = m
    out[2, 0] = m * cx
    out[2, 2] = m
    return out


@njit(cache=True)
def crm(v):
    out = np.zeros((3, 3))
    out[1, 0] = v[2]
    out[1, 2] = -v[0]
    out[2, 0] = -v[1]
    out[2, 1] = v[0]
    return out


@njit(cache=True)
def _joint_transforms(q, parent, offset):
    nb = q.shape[0]
    Xup = np.zeros((nb, 3, 3))
    S = np.zeros((nb, 3))
    lam = np.empty(nb, dtype=np.int64)
    lam[0], lam[1] = -1, 0
    Xup[0] = plnr(0.0, q[0], 0.0)
    S[0, 1] = 1.0
    Xup[1] = plnr(0.0, 0.0, q[1])
    S[1, 2] = 1.0
    for i in range(parent.shape[0]):
        b = i + 2
        S[b, 0] = 1.0
        if parent[i] < 0:
            lam[b] = 1
            Xup[b] = plnr(q[b], 0.0, 0.0)
        else:
            lam[b] = parent[i] + 2
            Xup[b] = plnr(q[b], 0.0, 0.0) @ plnr(0.0, offset[i, 0], offset[i, 1])
    return Xup, S, lam


@njit(cache=True)
def _body_inertias(nb, com, mass, inertia):
    Ib = np.zeros((nb, 3, 3))
    for i in range(mass.shape[0]):
        Ib[i + 2] = mcI(mass[i], com[i, 0], com[i, 1], inertia[i])
    return Ib


@njit(cache=True)
def crba(q, parent, offset, com, mass, inertia, armature):
    """Joint-space mass matrix in ``q = (x, z, theta, j)``."""
    nb = q.shape[0]
    Xup, S, lam = _joint_transforms(q, parent, offset)
    IC = _body_inertias(nb, com, mass, inertia)
    for i in range(nb - 1, -1, -1):
        if lam[i] >= 0:
            IC[lam[i]] += Xup[i].T @ IC[i] @ Xup[i]
    H = np.zeros((nb, nb))
    for i in range(nb):
        fh = IC[i] @ S[i]
        H[i, i] = S[i] @ fh
        k = i
        while lam[k] >= 0:
            fh = Xup[k].T @ fh
            k = lam[k]
            H[i, k] = S[k] @ fh
            H[k, i] = H[i, k]
    for a in range(armature.shape[0]):
        H[a + 3, a + 3] += armature[a]
    return H


@njit(cache=True)
def rnea(q, qd, qdd, gravity, parent, offset, com, mass, inertia, armature):
    """Inverse dynamics ``tau = H qdd + C(q, qd)`` including gravity."""
    nb = q.shape[0]
    Xup, S, lam = _joint_transforms(q, parent, offset)
    Ib = _body_inertias(nb, com, mass, inertia)
    v = np.zeros((nb, 3))
    a = np.zeros((nb, 3))
    f = np.zeros((nb, 3))
    a0 = np.array([0.0, 0.0, gravity])
    for i in range(nb):
        vJ = S[i] * qd[i]
        if lam[i] < 0:
            v[i] = vJ
            a[i] = Xup[i] @ a0 + S[i] * qdd[i]
        else:
            v[i] = Xup[i] @ v[lam[i]] + vJ
            a[i] = Xup[i] @ a[lam[i]] + S[i] * qdd[i] + crm(v[i]) @ vJ
        f[i] = Ib[i] @ a[i] - crm(v[i]).T @ (Ib[i] @ v[i])
    tau = np.zeros(nb)
    for i in range(nb - 1, -1, -1):
        tau[i] = S[i] @ f[i]
        if lam[i] >= 0:
            f[lam[i]] += Xup[i].T @ f[i]
    for k in range(armature.shape[0]):
        tau[k + 3] += armature[k] * qdd[k + 3]
    return tau


# ---------------------------------------------------------------------------
# centre-of-mass formulation


@njit(cache=True)
def com_position(c, mass):
    M = mass.sum()
    x = 0.0
    z = 0.0
    for i in range(mass.shape[0]):
        x += mass[i] * c[i, 0]
        z += mass[i] * c[i, 1]
    return x / M, z / M


@njit(cache=True)
def relative_inertia(c, o, mass, inertia, armature, anc):
    """``M_rel`` and the COM Jacobian ``Abar`` (both w.r.t. w at fixed base)."""
    n = mass.shape[0]
    M = mass.sum()
    Abar = np.zeros((2, n))
    Mrel = np.zeros((n, n))
    for i in range(n):
        A = point_jacobian(c[i, 0], c[i, 1], i, o, anc)
        Abar += mass[i] * A
        Mrel += mass[i] * (A.T @ A)
        for a in range(n):
            if anc[i, a]:
                for b in range(n):
                    if anc[i, b]:
                        Mrel[a, b] += inertia[i]
    Abar /= M
    Mrel -= M * (Abar.T @ Abar)
    for k in range(armature.shape[0]):
        Mrel[k + 1, k + 1] += armature[k]
    return Mrel, Abar


@njit(cache=True)
def relative_ke_gradient(w, c, o, mass, anc, Abar):
    """d/dj_k of ``0.5 w^T M_rel(j) w`` at fixed ``w`` (entry 0, pitch, is zero)."""
    n = mass.shape[0]
    grad = np.zeros(n)
    ubx = 0.0
    ubz = 0.0
    for a in range(n):
        ubx += Abar[0, a] * w[a]
        ubz += Abar[1, a] * w[a]
    for i in range(n):
        A = point_jacobian(c[i, 0], c[i, 1], i, o, anc)
        ux = 0.0
        uz = 0.0
        for a in range(n):
            ux += A[0, a] * w[a]
            uz += A[1, a] * w[a]
        rx = ux - ubx
        rz = uz - ubz
        for k in range(1, n):
            if not anc[i, k]:
                continue
            # du_i/dj_k = -sum_a w_a (c_i - o_a) for a below k, (c_i - o_k) otherwise
            dx = 0.0
            dz = 0.0
            for a in range(n):
                if anc[i, a]:
                    if anc[a, k]:
                        dx -= w[a] * (c[i, 0] - o[a, 0])
                        dz -= w[a] * (c[i, 1] - o[a, 1])
                    else:
                        dx -= w[a] * (c[i, 0] - o[k, 0])
                        dz -= w[a] * (c[i, 1] - o[k, 1])
            grad[k] += mass[i] * (rx * dx + rz * dz)
    return grad


@njit(cache=True)
def base_from_com(rc, theta, j, parent, offset, com, mass):
    """Base position placing the whole-body COM at ``rc`` (kinematics is translation-invariant)."""
    phi, o, c = link_kinematics(0.0, 0.0, theta, j, parent, offset, com)
    cx, cz = com_position(c, mass)
    return rc[0] - cx, rc[1] - cz


@njit(cache=True)
def configure(y, parent, offset, com, mass):
    """World kinematics for ``y = (rc_x, rc_z, theta, j...)``."""
    bx, bz = base_from_com(y[:2], y[2], y[3:], parent, offset, com, mass)
    return link_kinematics(bx, bz, y[2], y[3:], parent, offset, com)


@njit(cache=True)
def contact_forces(y, ydot, phi, o, Abar, params, contact_link, contact_local, anc, out):
    """Penalty contacts. Fills ``out[k] = (px, pz, Fx, Fz)``; returns generalised force."""
    n = o.shape[0]
    Q = np.zeros(2 + n)
    kn, dn, ct, mu = params[P_KN], params[P_DN], params[P_CT], params[P_MU]
    w = ydot[2:]
    for k in range(contact_link.shape[0]):
        li = contact_link[k]
        dx, dz = _rot(phi[li], contact_local[k, 0], contact_local[k, 1])
        px = o[li, 0] + dx
        pz = o[li, 1] + dz
        out[k, 0] = px
        out[k, 1] = pz
        out[k, 2] = 0.0
        out[k, 3] = 0.0
        if pz >= 0.0:
            continue
        A = point_jacobian(px, pz, li, o, anc)
        vx = ydot[0]
        vz = ydot[1]
        for a in range(n):
            vx += (A[0, a] - Abar[0, a]) * w[a]
            vz += (A[1, a] - Abar[1, a]) * w[a]
        N = kn * (-pz) - dn * vz
        if N <= 0.0:
            continue
        Ft = -ct * vx
        lim = mu * N
        if Ft > lim:
            Ft = lim
        elif Ft < -lim:
            Ft = -lim
        out[k, 2] = Ft
        out[k, 3] = N
        Q[0] += Ft
        Q[1] += N
        for a in range(n):
            Q[2 + a] += (A[0, a] - Abar[0, a]) * Ft + (A[1, a] - Abar[1, a]) * N
    return Q


@njit(cache=True)
def limit_torques(j, jd, lower, upper, k_lim, d_lim):
    tau = np.zeros(j.shape[0])
    for a in range(j.shape[0]):
        if j[a] > upper[a]:
            tau[a] = -k_lim * (j[a] - upper[a]) - d_lim * jd[a]
        elif j[a] < lower[a]:
            tau[a] = -k_lim * (j[a] - lower[a]) - d_lim * jd[a]
    return tau


@njit(cache=True)
def pd_law(q_d, q, qd, kp, kd, limit):
    tau = np.empty(q.shape[0])
    for a in range(q.shape[0]):
        t = kp[a] * (q_d[a] - q[a]) - kd[a] * qd[a]
        if t > limit[a]:
            t = limit[a]
        elif t < -limit[a]:
            t = -limit[a]
        tau[a] = t
    return tau


@njit(cache=True)
def simulate(y, p, q_d, kp, kd, tau_lim, use_pd, lower, upper, params, dt, nsub,
             parent, offset, com, mass, inertia, armature, contact_link, contact_local, anc,
             contact_out):
    """Advance ``nsub`` substeps in place. Returns False on a non-finite state."""
    M = mass.sum()
    n = mass.shape[0]
    g = params[P_G]
    jdamp = params[P_JDAMP]
    for _ in range(nsub):
        phi, o, c = configure(y, parent, offset, com, mass)
        Mrel, Abar = relative_inertia(c, o, mass, inertia, armature, anc)
        w = np.linalg.solve(Mrel, p[2:])
        ydot = np.empty(2 + n)
        ydot[0] = p[0] / M
        ydot[1] = p[1] / M
        ydot[2:] = w
        Q = contact_forces(y, ydot, phi, o, Abar, params, contact_link, contact_local, anc,
                           contact_out)
        Q[1] -= M * g
        Q[2:] += relative_ke_gradient(w, c, o, mass, anc, Abar)
        j = y[3:]
        jd = w[1:]
        tau = limit_torques(j, jd, lower, upper, params[P_KLIM], params[P_DLIM])
        if use_pd:
            tau += pd_law(q_d, j, jd, kp, kd, tau_lim)
        for a in range(n - 1):
            Q[3 + a] += tau[a] - jdamp * jd[a]
        for k in range(p.shape[0]):
            p[k] += dt * Q[k]
        # y is unchanged so far this substep, so M_rel still applies
        w = np.linalg.solve(Mrel, p[2:])
        y[0] += dt * p[0] / M
        y[1] += dt * p[1] / M
        for a in range(n):
            y[2 + a] += dt * w[a]
        for k in range(y.shape[0]):
            if not math.isfinite(y[k]) or not math.isfinite(p[k]):
                return False
    return True


@njit(cache=True)
def Mrel_at(y, parent, offset, com, mass, inertia, armature, anc):
    phi, o, c = configure(y, parent, offset, com, mass)
    Mrel, _ = relative_inertia(c, o, mass, inertia, armature, anc)
    return Mrel


@njit(cache=True)
def velocities(y, p, parent, offset, com, mass, inertia, armature, anc):
    """Generalised velocities ``(rc_dot, w)`` and the base (pivot) velocity."""
    phi, o, c = configure(y, parent, offset, com, mass)
    Mrel, Abar = relative_inertia(c, o, mass, inertia, armature, anc)
    w = np.linalg.solve(Mrel, p[2:])
    M = mass.sum()
    vcx = p[0] / M
    vcz = p[1] / M
    bvx = vcx
    bvz = vcz
    for a in range(w.shape[0]):
        bvx -= Abar[0, a] * w[a]
        bvz -= Abar[1, a] * w[a]
    return vcx, vcz, w, bvx, bvz, phi, o, c, Mrel
