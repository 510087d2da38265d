"""Open-loop equations of motion: mass matrix, Coriolis/gravity and spring terms."""

from __future__ import annotations

import numpy as np

from .kinematics import KinematicsCache
from .model import GRAVITY, GeneralizedState, RobotModel
from .so3 import cross


def _kin(model, state, kin):
    return kin if kin is not None else KinematicsCache(model, state)


def world_inertias(model: RobotModel, kin: KinematicsCache) -> np.ndarray:
    I_body = np.array([b.inertia for b in model.bodies])
    return np.einsum("bij,bjk,blk->bil", kin.R, I_body, kin.R)


def mass_matrix(model: RobotModel, state: GeneralizedState, kin: KinematicsCache | None = None) -> np.ndarray:
    """Projected Newton-Euler mass matrix, sum of J_c^T m J_c + J_R^T I J_R."""
    kin = _kin(model, state, kin)
    Jc, Jr = kin.body_jacobians()
    m = np.array([b.mass for b in model.bodies])
    Iw = world_inertias(model, kin)
    M = np.einsum("bki,b,bkj->ij", Jc, m, Jc) + np.einsum("bki,bkl,blj->ij", Jr, Iw, Jr)
    return 0.5 * (M + M.T)


def coriolis_terms(model: RobotModel, state: GeneralizedState, kin: KinematicsCache | None = None) -> np.ndarray:
    kin = _kin(model, state, kin)
    Jc, Jr = kin.body_jacobians()
    m = np.array([b.mass for b in model.bodies])
    Iw = world_inertias(model, kin)
    w = kin.omega
    a_bias = kin.com_drifts()
    torque = np.einsum("bij,bj->bi", Iw, kin.angular_drift) + cross(w, np.einsum("bij,bj->bi", Iw, w))
    return np.einsum("bki,b,bk->i", Jc, m, a_bias) + np.einsum("bki,bk->i", Jr, torque)


def gravity_terms(model: RobotModel, state: GeneralizedState, kin: KinematicsCache | None = None) -> np.ndarray:
    kin = _kin(model, state, kin)
    Jc, _ = kin.body_jacobians()
    m = np.array([b.mass for b in model.bodies])
    return -np.einsum("bki,b,k->i", Jc, m, GRAVITY)


def nonlinear_terms(model: RobotModel, state: GeneralizedState, kin: KinematicsCache | None = None) -> np.ndarray:
    """b + g: Coriolis/centrifugal plus gravity generalized forces."""
    kin = _kin(model, state, kin)
    return coriolis_terms(model, state, kin) + gravity_terms(model, state, kin)


def spring_torques(model: RobotModel, state: GeneralizedState) -> np.ndarray:
    """Linear torsional springs; enters the left-hand side of the EoM."""
    s = np.zeros(model.nu)
    for sp in model.springs:
        s[model.joint_coord(sp.joint)] += sp.stiffness * (state.phi[sp.joint] - sp.rest_angle)
    return s


def kinetic_energy(model: RobotModel, state: GeneralizedState, kin: KinematicsCache | None = None) -> float:
    kin = _kin(model, state, kin)
    m = np.array([b.mass for b in model.bodies])
    vc = kin.com_velocities()
    w = kin.omega
    Iw = world_inertias(model, kin)
    return float(0.5 * np.sum(m * np.sum(vc * vc, axis=1)) + 0.5 * np.einsum("bi,bij,bj->", w, Iw, w))


def gravity_energy(model: RobotModel, state: GeneralizedState, kin: KinematicsCache | None = None) -> float:
    kin = _kin(model, state, kin)
    m = np.array([b.mass for b in model.bodies])
    return float(-np.sum(m * (kin.com @ GRAVITY)))


def spring_energy(model: RobotModel, state: GeneralizedState) -> float:
    return float(sum(0.5 * sp.stiffness * (state.phi[sp.joint] - sp.rest_angle) ** 2 for sp in model.springs))


def total_energy(model: RobotModel, state: GeneralizedState, kin: KinematicsCache | None = None) -> float:
    kin = _kin(model, state, kin)
    return kinetic_energy(model, state, kin) + gravity_energy(model, state, kin) + spring_energy(model, state)


def center_of_mass(model: RobotModel, kin: KinematicsCache, bodies=None) -> np.ndarray:
    idx = range(len(model.bodies)) if bodies is None else bodies
    m = np.array([model.bodies[i].mass for i in idx])
    return (m[:, None] * kin.com[list(idx)]).sum(axis=0) / m.sum()
