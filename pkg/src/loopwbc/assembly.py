"""Consistent initial configurations: loop closure, ground placement, velocity projection."""

from __future__ import annotations

import numpy as np

from .constraints import assemble_constraints, contact_jacobians, contour_point, contour_parameter
from .errors import NoConvergence
from .kinematics import KinematicsCache
from .model import GeneralizedState, RobotModel, zero_state
from .so3 import rot_x, rot_y, rot_z, cross
from .terrain import Terrain


def loop_passive_joints(model: RobotModel) -> list[int]:
    """Unactuated joints whose angles change the loop gaps."""
    out = []
    for lp in model.loops:
        path = model.support[lp.p_body] ^ model.support[lp.q_body]
        out += [j for j in np.flatnonzero(path) if j not in model.actuators and j not in out]
    return out


def loop_gap(model: RobotModel, state: GeneralizedState) -> np.ndarray:
    kin = KinematicsCache(model, state)
    R_BI = kin.R[0].T
    g = []
    for i in range(len(model.loops)):
        P, Q = kin.loop_points(i)
        d = R_BI @ (Q - P)
        g += [d[0], d[2]]
    return np.array(g)


def close_loops(model: RobotModel, state: GeneralizedState, tol: float = 1e-13, max_iter: int = 50) -> GeneralizedState:
    """Newton iteration on the passive loop joints until every in-plane gap vanishes."""
    s = state.copy()
    free = loop_passive_joints(model)
    for _ in range(max_iter):
        g = loop_gap(model, s)
        if np.abs(g).max() < tol:
            return s
        kin = KinematicsCache(model, s)
        R_BI = kin.R[0].T
        rows = []
        for i, lp in enumerate(model.loops):
            P, Q = kin.loop_points(i)
            JPp, _ = kin.point_jacobian(lp.p_body, P)
            JPq, _ = kin.point_jacobian(lp.q_body, Q)
            d = R_BI @ (JPq - JPp)
            rows += [d[0], d[2]]
        J = np.array(rows)[:, [model.joint_coord(j) for j in free]]
        s.phi[free] -= np.linalg.lstsq(J, g, rcond=None)[0]
    if np.abs(loop_gap(model, s)).max() < 1e-9:
        return s
    raise NoConvergence("loop closure did not converge")


def _contact_heights(model, state, terrain, t):
    kin = KinematicsCache(model, state)
    out = []
    for w in model.wheels:
        ground = terrain.query(kin.p[w.body][:2], t)
        sigma = contour_parameter(kin.R[w.body].T, ground.normal)
        c = kin.p[w.body] + kin.R[w.body] @ contour_point(w.radius, sigma)
        out.append((c - np.array([c[0], c[1], ground.height])) @ ground.normal)
    return np.array(out)


def place_on_ground(model: RobotModel, state: GeneralizedState, terrain: Terrain | None = None,
                    t: float = 0.0, adjust_roll: bool = True) -> GeneralizedState:
    """Shift the base height (and roll about the heading) until both wheels touch the terrain."""
    terrain = terrain or Terrain.flat()
    s = state.copy()
    for _ in range(50):
        d = _contact_heights(model, s, terrain, t)
        if np.abs(d).max() < 1e-13:
            break
        if not adjust_roll:
            s.r[2] -= d.mean()
            continue
        # finite-difference Newton step in (z, roll about the base x-axis)
        J = np.empty((2, 2))
        h = 1e-7
        J[:, 0] = 1.0
        sr = s.copy()
        sr.R = s.R @ rot_x(h)
        J[:, 1] = (_contact_heights(model, sr, terrain, t) - d) / h
        dz, droll = np.linalg.solve(J, -d)
        s.r[2] += dz
        s.R = s.R @ rot_x(droll)
    return s


def lumped_offset(model: RobotModel, state: GeneralizedState, terrain: Terrain | None = None, t: float = 0.0) -> float:
    """Pitch of the non-wheel centre of mass about the line of support (rad)."""
    from .lqr import lump_pendulum

    return lump_pendulum(model, KinematicsCache(model, state), terrain, t).theta


def standing_state(model: RobotModel, terrain: Terrain | None = None, *, hip=None, position=(0.0, 0.0),
                   yaw: float = 0.0, pitch: float | None = None, speed: float = 0.0, yaw_rate: float = 0.0,
                   t: float = 0.0) -> GeneralizedState:
    """A closed, grounded configuration; balanced (lumped pitch zero) unless ``pitch`` is given."""
    terrain = terrain or Terrain.flat()
    s = zero_state(model)
    s = close_loops(model, s)
    if hip is not None:
        # continuation in the hip angle keeps Newton on the assembled branch
        hips = [j for j in model.actuators if model.joints[j].name.startswith("hip")]
        steps = max(1, int(np.ceil(abs(hip) / 0.05)))
        for k in range(1, steps + 1):
            s.phi[hips] = hip * k / steps
            s = close_loops(model, s)
    s.r = np.array([position[0], position[1], 1.0])

    def build(p):
        s2 = s.copy()
        s2.R = rot_z(yaw) @ rot_y(p)
        return place_on_ground(model, s2, terrain, t)

    if pitch is None:
        p = 0.0
        for _ in range(30):
            th = lumped_offset(model, build(p), terrain, t)
            if abs(th) < 1e-13:
                break
            h = 1e-7
            dth = (lumped_offset(model, build(p + h), terrain, t) - th) / h
            p -= th / dth
    else:
        p = pitch
    s = build(p)
    return set_velocity(model, s, terrain, speed=speed, yaw_rate=yaw_rate, t=t)


def set_velocity(model: RobotModel, state: GeneralizedState, terrain: Terrain | None = None, *,
                 speed: float = 0.0, yaw_rate: float = 0.0, t: float = 0.0) -> GeneralizedState:
    """Rigid forward motion plus a yaw turn about the contact midpoint, projected onto the constraints.

    ``speed`` is the ground velocity of the contact midpoint G.
    """
    from .frames import frame_from_kinematics

    s = state.copy()
    u = np.zeros(model.nu)
    heading = s.R[:, 0].copy()
    heading[2] = 0.0
    heading /= np.linalg.norm(heading)
    kin = KinematicsCache(model, s)
    G = frame_from_kinematics(kin, terrain, t).origin
    w = np.array([0.0, 0.0, yaw_rate])
    u[0:3] = speed * heading + cross(w, s.r - G)
    u[3:6] = w
    for wh in model.wheels:
        j = next(i for i, jt in enumerate(model.joints) if jt.child == wh.body)
        v_hub = speed * heading + cross(w, kin.p[wh.body] - G)
        u[model.joint_coord(j)] = (v_hub @ heading) / wh.radius
    s.u = u
    return project_velocity(model, s, terrain, t)


def project_velocity(model: RobotModel, state: GeneralizedState, terrain: Terrain | None = None,
                     t: float = 0.0) -> GeneralizedState:
    """Smallest kinetic-energy change that satisfies the loop and rolling velocity constraints."""
    from .dynamics import mass_matrix

    s = state.copy()
    kin = KinematicsCache(model, s)
    M = mass_matrix(model, s, kin)
    cons = assemble_constraints(model, kin, terrain, t)
    resid = cons.loops.gap_rate
    if cons.contacts is not None:
        resid = np.concatenate([resid, cons.contacts.rolling_velocity])
    W = cons.W
    MinvWT = np.linalg.solve(M, W.T)
    s.u = s.u - MinvWT @ np.linalg.solve(W @ MinvWT, resid)
    return s


__all__ = [
    "close_loops",
    "contact_jacobians",
    "loop_gap",
    "loop_passive_joints",
    "place_on_ground",
    "project_velocity",
    "set_velocity",
    "standing_state",
]
