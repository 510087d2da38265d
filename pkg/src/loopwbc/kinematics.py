"""Forward kinematics, point Jacobians and Jacobian drift of the opened tree."""

from __future__ import annotations

import numpy as np

from .model import GeneralizedState, RobotModel
from .so3 import rot_axis, skew, cross


class KinematicsCache:
    """Poses, Jacobians and bias accelerations for one state.

    Jacobians follow the floating-base convention: stacking the positional
    Jacobian of a point over the rotational Jacobian of its body maps ``u``
    to the point's inertial velocity and the body's angular velocity.
    Bias accelerations (``J̇ u``) are propagated recursively from the base
    with ``u̇ = 0``.
    """

    def __init__(self, model: RobotModel, state: GeneralizedState):
        self.model = model
        self.state = state
        nb = len(model.bodies)
        nj = model.nj
        self.R = np.empty((nb, 3, 3))
        self.p = np.empty((nb, 3))
        self.R[0] = state.R
        self.p[0] = state.r
        self.axis_w = np.empty((nj, 3))
        for j, joint in enumerate(model.joints):
            Rp = self.R[joint.parent]
            self.R[joint.child] = Rp @ rot_axis(joint.axis, state.phi[j])
            self.p[joint.child] = self.p[joint.parent] + Rp @ joint.origin
            self.axis_w[j] = Rp @ joint.axis
        self.origin_w = self.p[[j.child for j in model.joints]] if nj else np.zeros((0, 3))
        self.com = self.p + np.einsum("bij,bj->bi", self.R, np.array([b.com for b in model.bodies]))
        self._jac_cache = None
        self._vel_cache = None

    # ------------------------------------------------------------ poses
    def body_point(self, body: int, local) -> np.ndarray:
        return self.p[body] + self.R[body] @ np.asarray(local, dtype=float)

    def loop_points(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lp = self.model.loops[i]
        return self.body_point(lp.p_body, lp.p_point), self.body_point(lp.q_body, lp.q_point)

    def points(self) -> dict[str, np.ndarray]:
        """World positions of every named point the constraints use."""
        out = {"base": self.p[0].copy()}
        for i, lp in enumerate(self.model.loops):
            out[f"P_{lp.name}"], out[f"Q_{lp.name}"] = self.loop_points(i)
        for w in self.model.wheels:
            out[f"hub_{w.name}"] = self.p[w.body].copy()
        return out

    # ------------------------------------------------------------ Jacobians
    def point_jacobian(self, body: int, x) -> tuple[np.ndarray, np.ndarray]:
        """Positional and rotational Jacobians (3 x n_u each) of world point ``x`` fixed to ``body``."""
        m = self.model
        nb0 = m.nbase
        JP = np.zeros((3, m.nu))
        JR = np.zeros((3, m.nu))
        if m.floating_base:
            JP[:, :3] = np.eye(3)
            JP[:, 3:6] = -skew(x - self.p[0])
            JR[:, 3:6] = np.eye(3)
        idx = np.flatnonzero(m.support[body])
        if idx.size:
            a = self.axis_w[idx]
            JP[:, nb0 + idx] = cross(a, x - self.origin_w[idx]).T
            JR[:, nb0 + idx] = a.T
        return JP, JR

    def body_jacobians(self) -> tuple[np.ndarray, np.ndarray]:
        """CoM positional and rotational Jacobians of all bodies, shape (n_bodies, 3, n_u)."""
        if self._jac_cache is None:
            m = self.model
            nb = len(m.bodies)
            nb0 = m.nbase
            Jc = np.zeros((nb, 3, m.nu))
            Jr = np.zeros((nb, 3, m.nu))
            if m.floating_base:
                d = self.com - self.p[0]
                Jc[:, :, :3] = np.eye(3)
                # -skew(d) for every body at once
                Jc[:, 0, 4], Jc[:, 0, 5] = d[:, 2], -d[:, 1]
                Jc[:, 1, 3], Jc[:, 1, 5] = -d[:, 2], d[:, 0]
                Jc[:, 2, 3], Jc[:, 2, 4] = d[:, 1], -d[:, 0]
                Jr[:, :, 3:6] = np.eye(3)
            if m.nj:
                sup = m.support[:, :, None]
                diff = self.com[:, None, :] - self.origin_w[None, :, :]
                cr = cross(self.axis_w[None, :, :], diff) * sup
                Jc[:, :, nb0:] = cr.transpose(0, 2, 1)
                Jr[:, :, nb0:] = (self.axis_w[None, :, :] * sup).transpose(0, 2, 1)
            self._jac_cache = (Jc, Jr)
        return self._jac_cache

    # ------------------------------------------------------------ velocities
    def _velocities(self):
        """Recursive body velocities and bias accelerations at the frame origins."""
        if self._vel_cache is None:
            m = self.model
            u = self.state.u
            nb = len(m.bodies)
            w = np.zeros((nb, 3))
            v = np.zeros((nb, 3))
            alpha = np.zeros((nb, 3))
            acc = np.zeros((nb, 3))
            if m.floating_base:
                v[0] = u[:3]
                w[0] = u[3:6]
            for j, joint in enumerate(m.joints):
                p, c = joint.parent, joint.child
                d = self.p[c] - self.p[p]
                wj = self.axis_w[j] * u[m.nbase + j]
                wp = w[p]
                w[c] = wp + wj
                v[c] = v[p] + cross(wp, d)
                alpha[c] = alpha[p] + cross(wp, wj)
                acc[c] = acc[p] + cross(alpha[p], d) + cross(wp, cross(wp, d))
            self._vel_cache = (w, v, alpha, acc)
        return self._vel_cache

    @property
    def omega(self) -> np.ndarray:
        return self._velocities()[0]

    @property
    def angular_drift(self) -> np.ndarray:
        """J̇_R u per body."""
        return self._velocities()[2]

    def point_velocity(self, body: int, x) -> np.ndarray:
        w, v, _, _ = self._velocities()
        return v[body] + cross(w[body], x - self.p[body])

    def point_drift(self, body: int, x) -> np.ndarray:
        """J̇_P u of the material point of ``body`` currently at world position ``x``."""
        w, _, alpha, acc = self._velocities()
        e = x - self.p[body]
        wb = w[body]
        return acc[body] + cross(alpha[body], e) + cross(wb, cross(wb, e))

    def com_drifts(self) -> np.ndarray:
        w, _, alpha, acc = self._velocities()
        e = self.com - self.p
        return acc + cross(alpha, e) + cross(w, cross(w, e))

    def com_velocities(self) -> np.ndarray:
        w, v, _, _ = self._velocities()
        return v + cross(w, self.com - self.p)


def forward_kinematics(model: RobotModel, state: GeneralizedState) -> KinematicsCache:
    return KinematicsCache(model, state)


def point_jacobians(model: RobotModel, state: GeneralizedState, kin: KinematicsCache | None = None):
    """Jacobians of every named constraint point, keyed like :meth:`KinematicsCache.points`."""
    kin = kin or KinematicsCache(model, state)
    out = {}
    for name, x in kin.points().items():
        body = _point_body(model, name)
        out[name] = kin.point_jacobian(body, x)
    return out


def jacobian_drift(model: RobotModel, state: GeneralizedState, kin: KinematicsCache | None = None):
    """Bias accelerations J̇_P u of every named constraint point."""
    kin = kin or KinematicsCache(model, state)
    return {name: kin.point_drift(_point_body(model, name), x) for name, x in kin.points().items()}


def _point_body(model: RobotModel, name: str) -> int:
    if name == "base":
        return 0
    kind, _, rest = name.partition("_")
    if kind in ("P", "Q"):
        lp = next(lp for lp in model.loops if lp.name == rest)
        return lp.p_body if kind == "P" else lp.q_body
    return next(w.body for w in model.wheels if w.name == rest)
