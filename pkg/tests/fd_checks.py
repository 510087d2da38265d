"""Finite-difference checks of every Jacobian and drift term along the motion."""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from loopwbc.constraints import contact_jacobians, loop_closure
from loopwbc.kinematics import KinematicsCache
from loopwbc.model import GeneralizedState
from loopwbc.so3 import exp_map


def random_configuration(model, rng, speed=1.0):
    phi = rng.uniform(-0.6, 0.6, model.nj)
    R = Rotation.from_rotvec(rng.normal(0, 0.3, 3)).as_matrix()
    r = np.array([*rng.uniform(-1, 1, 2), rng.uniform(0.3, 0.5)])
    return GeneralizedState(r, R, phi, rng.normal(0, speed, model.nu))


def advance(model, s, eps):
    """Configuration reached after moving with the constant velocity ``s.u`` for ``eps`` seconds."""
    u = s.u
    nb = model.nbase
    if model.floating_base:
        r, R = s.r + eps * u[0:3], exp_map(eps * u[3:6]) @ s.R
    else:
        r, R = s.r, s.R
    return GeneralizedState(r, R, s.phi + eps * u[nb:], u.copy())


def _rel(a, b, floor=1e-3):
    return float(np.abs(a - b).max() / max(floor, np.abs(b).max()))


def jacobian_errors(model, s, eps=1e-5):
    """Largest relative mismatch per quantity between analytic terms and central differences."""
    kp, km = KinematicsCache(model, advance(model, s, eps)), KinematicsCache(model, advance(model, s, -eps))
    k0 = KinematicsCache(model, s)
    u = s.u
    err = {}
    Jp_all, Jr_all = k0.body_jacobians()
    Jp_p, Jr_p = kp.body_jacobians()
    Jp_m, Jr_m = km.body_jacobians()
    e = {"JP": 0.0, "JR": 0.0, "JP_drift": 0.0, "JR_drift": 0.0}
    for b in range(len(model.bodies)):
        local = model.bodies[b].com
        x_fd = (kp.body_point(b, local) - km.body_point(b, local)) / (2 * eps)
        e["JP"] = max(e["JP"], _rel(Jp_all[b] @ u, x_fd))
        dR = kp.R[b] @ km.R[b].T
        w_fd = Rotation.from_matrix(dR).as_rotvec() / (2 * eps)
        e["JR"] = max(e["JR"], _rel(Jr_all[b] @ u, w_fd))
        e["JP_drift"] = max(e["JP_drift"], _rel(k0.com_drifts()[b], (Jp_p[b] @ u - Jp_m[b] @ u) / (2 * eps)))
        e["JR_drift"] = max(e["JR_drift"], _rel(k0.angular_drift[b], (Jr_p[b] @ u - Jr_m[b] @ u) / (2 * eps)))
    err.update(e)

    # a point away from the centre of mass exercises the lever arm terms
    for i, lp in enumerate(model.loops):
        P0 = k0.body_point(lp.p_body, lp.p_point)
        JP0, _ = k0.point_jacobian(lp.p_body, P0)
        Pp, Pm = kp.body_point(lp.p_body, lp.p_point), km.body_point(lp.p_body, lp.p_point)
        err["JP"] = max(err["JP"], _rel(JP0 @ u, (Pp - Pm) / (2 * eps)))
        JPp, _ = kp.point_jacobian(lp.p_body, Pp)
        JPm, _ = km.point_jacobian(lp.p_body, Pm)
        err["JP_drift"] = max(err["JP_drift"], _rel(k0.point_drift(lp.p_body, P0), (JPp @ u - JPm @ u) / (2 * eps)))

    l0, lp_, lm = loop_closure(model, k0), loop_closure(model, kp), loop_closure(model, km)
    err["loop_rate"] = _rel(l0.gap_rate, (lp_.gap - lm.gap) / (2 * eps))
    err["loop_drift"] = _rel(l0.Xu, (lp_.Y @ u - lm.Y @ u) / (2 * eps))
    if model.wheels:
        c0, cp, cm = contact_jacobians(model, k0), contact_jacobians(model, kp), contact_jacobians(model, km)
        err["rolling_drift"] = _rel(c0.drift_A, (cp.rolling_velocity - cm.rolling_velocity) / (2 * eps))
        err["slip"] = _rel(c0.J_F @ u, c0.slip)
    return err
