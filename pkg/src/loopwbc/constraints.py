"""Loop-closure and rolling-contact constraints, constraint forces and forward dynamics."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import dynamics as dyn
from .errors import DegenerateContact, SingularConstraintSystem
from .kinematics import KinematicsCache
from .model import GeneralizedState, RobotModel
from .so3 import atan2_gradient, skew, cross
from .terrain import Terrain

CONTACT_EPS = 1e-9
MAX_COND = 1e10


# ---------------------------------------------------------------- contour kinematics


def contour_point(radius: float, sigma: float) -> np.ndarray:
    """Contact point on the wheel rim, wheel frame. sigma = 0 is the wheel-frame -z point."""
    return -radius * np.array([np.sin(sigma), 0.0, np.cos(sigma)])


def contour_tangent(radius: float, sigma: float) -> np.ndarray:
    """d/dsigma of :func:`contour_point`."""
    return -radius * np.array([np.cos(sigma), 0.0, -np.sin(sigma)])


def contour_parameter(R_WI: np.ndarray, n: np.ndarray) -> float:
    """Angle of the rim point lying lowest along ``-n``."""
    c = R_WI @ n
    if np.hypot(c[0], c[2]) < CONTACT_EPS:
        raise DegenerateContact("ground normal is parallel to the wheel axis")
    return float(np.arctan2(c[0], c[2]))


def contour_rate(R_WI: np.ndarray, omega_WI: np.ndarray, n: np.ndarray) -> float:
    """Time derivative of :func:`contour_parameter` for a constant ground normal.

    ``omega_WI`` is the angular velocity of the inertial frame relative to the
    wheel, expressed in the wheel frame (i.e. ``-R_WI @ omega_IW``).
    """
    c = R_WI @ n
    if np.hypot(c[0], c[2]) < CONTACT_EPS:
        raise DegenerateContact("ground normal is parallel to the wheel axis")
    dc = cross(omega_WI, c)
    ga, gb = atan2_gradient(c[0], c[2])
    return float(ga * dc[0] + gb * dc[2])


@dataclass
class ContactGeometry:
    normal: np.ndarray
    sigma: float
    sigma_dot: float
    R_IC: np.ndarray  # columns: heading, lateral, normal
    point: np.ndarray  # world position of C
    tangent: np.ndarray  # wheel frame
    ground_velocity: np.ndarray
    ground_acceleration: np.ndarray


@dataclass
class ContactTerms:
    geometry: list[ContactGeometry]
    J_A: np.ndarray  # (4, n_u) rows (x_l, z_l, x_r, z_r)
    drift_A: np.ndarray  # J̇_A u minus ground acceleration, (4,)
    J_F: np.ndarray  # (2, n_u) lateral rows
    rolling_velocity: np.ndarray  # J_A u relative to the ground, (4,)
    slip: np.ndarray  # lateral slip velocity, (2,)


def contact_jacobians(model: RobotModel, kin: KinematicsCache, terrain: Terrain | None = None, t: float = 0.0):
    """Rolling Jacobian, its drift and the lateral slip Jacobian for both wheels.

    The acceleration-level rows are the time derivative of the contact-frame
    velocity rows, so they contain the centripetal compensation term along the
    contour tangent and the rotation of the heading direction.
    """
    terrain = terrain or Terrain.flat()
    u = kin.state.u
    geoms, JA, dA, JF, vel, slip = [], [], [], [], [], []
    for wheel in model.wheels:
        b = wheel.body
        R_IW = kin.R[b]
        hub = kin.p[b]
        ground = terrain.query(hub[:2], t)
        n = ground.normal
        R_WI = R_IW.T
        w = kin.omega[b]
        sigma = contour_parameter(R_WI, n)
        sigma_dot = contour_rate(R_WI, -R_WI @ w, n)
        r_wc = R_IW @ contour_point(wheel.radius, sigma)
        tan_w = contour_tangent(wheel.radius, sigma)
        c = hub + r_wc
        axle = R_IW[:, 1]
        m = cross(axle, n)
        mn = np.linalg.norm(m)
        if mn < CONTACT_EPS:
            raise DegenerateContact(f"wheel {wheel.name}: axle parallel to the ground normal")
        x = m / mn
        y = cross(n, x)
        JP, _ = kin.point_jacobian(b, c)
        drift = kin.point_drift(b, c) + cross(w, R_IW @ tan_w) * sigma_dot
        v_rel = JP @ u - ground.velocity
        dm = cross(cross(w, axle), n)
        dx = (dm - x * (x @ dm)) / mn
        JA += [x @ JP, n @ JP]
        dA += [x @ (drift - ground.acceleration) + dx @ v_rel, n @ (drift - ground.acceleration)]
        JF.append(y @ JP)
        vel += [x @ v_rel, n @ v_rel]
        slip.append(y @ v_rel)
        geoms.append(ContactGeometry(n, sigma, sigma_dot, np.column_stack([x, y, n]), c, tan_w,
                                     ground.velocity, ground.acceleration))
    return ContactTerms(geoms, np.array(JA), np.array(dA), np.array(JF), np.array(vel), np.array(slip))


# ---------------------------------------------------------------- loops


@dataclass
class LoopTerms:
    J_L: np.ndarray  # (2 n_loops, n_u) in-plane rows of B(J_P - J_Q)
    Y: np.ndarray  # acceleration map, (2 n_loops, n_u)
    Xu: np.ndarray  # drift, (2 n_loops,)
    gap: np.ndarray  # in-plane components of B r_PQ
    gap_rate: np.ndarray  # Y u


def loop_closure(model: RobotModel, kin: KinematicsCache) -> LoopTerms:
    u = kin.state.u
    R_BI = kin.R[0].T
    if model.floating_base:
        w = u[3:6]
        JRB = np.zeros((3, model.nu))
        JRB[:, 3:6] = np.eye(3)
    else:
        w = np.zeros(3)
        JRB = np.zeros((3, model.nu))
    JL, Y, Xu, gap, rate = [], [], [], [], []
    for i, lp in enumerate(model.loops):
        P, Q = kin.loop_points(i)
        JPp, _ = kin.point_jacobian(lp.p_body, P)
        JPq, _ = kin.point_jacobian(lp.q_body, Q)
        r = Q - P
        Jpq = JPq - JPp
        v_pq = Jpq @ u
        a_pq = kin.point_drift(lp.q_body, Q) - kin.point_drift(lp.p_body, P)
        Yt = R_BI @ (skew(r) @ JRB + Jpq)
        Xt = R_BI @ (-cross(w, cross(r, w)) - 2.0 * cross(w, v_pq) + a_pq)
        Lt = R_BI @ (JPp - JPq)
        JL += [Lt[0], Lt[2]]
        Y += [Yt[0], Yt[2]]
        Xu += [Xt[0], Xt[2]]
        g = R_BI @ r
        gap += [g[0], g[2]]
        ru = Yt @ u
        rate += [ru[0], ru[2]]
    return LoopTerms(np.array(JL), np.array(Y), np.array(Xu), np.array(gap), np.array(rate))


def friction_matrix(slip: np.ndarray, mu_s: float) -> np.ndarray:
    """Velocity dependent sliding friction map C_F (2 x 4) acting on F_C."""
    C = np.zeros((2, 4))
    C[0, 1] = np.tanh(slip[0])
    C[1, 3] = np.tanh(slip[1])
    return -mu_s * C


# ---------------------------------------------------------------- stacked system


@dataclass
class ConstraintData:
    loops: LoopTerms
    contacts: ContactTerms | None
    C_F: np.ndarray
    J: np.ndarray  # force Jacobian, rows (loops, contacts)
    W: np.ndarray  # acceleration map
    Vu: np.ndarray  # drift

    @property
    def n_loop_rows(self) -> int:
        return self.loops.J_L.shape[0]

    @property
    def n_contact_rows(self) -> int:
        return 0 if self.contacts is None else self.contacts.J_A.shape[0]

    @property
    def J_L(self):
        return self.loops.J_L

    @property
    def J_A(self):
        return self.contacts.J_A

    @property
    def J_F(self):
        return self.contacts.J_F

    def to_dict(self) -> dict:
        d = {
            "J_L": self.loops.J_L.tolist(),
            "Y": self.loops.Y.tolist(),
            "Xu": self.loops.Xu.tolist(),
            "loop_gap": self.loops.gap.tolist(),
            "C_F": self.C_F.tolist(),
            "J": self.J.tolist(),
            "W": self.W.tolist(),
            "Vu": self.Vu.tolist(),
        }
        if self.contacts is not None:
            d.update({
                "J_A": self.contacts.J_A.tolist(),
                "J_A_drift": self.contacts.drift_A.tolist(),
                "J_F": self.contacts.J_F.tolist(),
                "sigma": [g.sigma for g in self.contacts.geometry],
                "sigma_dot": [g.sigma_dot for g in self.contacts.geometry],
            })
        return d

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def assemble_constraints(model: RobotModel, kin: KinematicsCache, terrain: Terrain | None = None,
                         t: float = 0.0, mu_s: float | None = None) -> ConstraintData:
    loops = loop_closure(model, kin)
    if not model.wheels:
        return ConstraintData(loops, None, np.zeros((0, 0)), loops.J_L, loops.Y, loops.Xu)
    contacts = contact_jacobians(model, kin, terrain, t)
    mu = model.mu_sliding if mu_s is None else mu_s
    C_F = friction_matrix(contacts.slip, mu)
    J = np.vstack([loops.J_L, contacts.J_A + C_F.T @ contacts.J_F])
    W = np.vstack([loops.Y, contacts.J_A])
    Vu = np.concatenate([loops.Xu, contacts.drift_A])
    return ConstraintData(loops, contacts, C_F, J, W, Vu)


@dataclass
class SystemTerms:
    """Everything the controller and the integrator need for one state."""

    kin: KinematicsCache
    M: np.ndarray
    nle: np.ndarray  # b + g
    s: np.ndarray
    cons: ConstraintData
    _chol: tuple | None = None

    @property
    def h(self) -> np.ndarray:
        return self.nle + self.s

    def m_solve(self, rhs):
        if self._chol is None:
            self._chol = cho_factor(self.M)
        return cho_solve(self._chol, rhs)


def system_terms(model: RobotModel, state: GeneralizedState, terrain: Terrain | None = None,
                 t: float = 0.0, mu_s: float | None = None) -> SystemTerms:
    kin = KinematicsCache(model, state)
    M = dyn.mass_matrix(model, state, kin)
    nle = dyn.nonlinear_terms(model, state, kin)
    s = dyn.spring_torques(model, state)
    cons = assemble_constraints(model, kin, terrain, t, mu_s)
    return SystemTerms(kin, M, nle, s, cons)


@dataclass
class ConstraintForces:
    F_L: np.ndarray
    F_C: np.ndarray  # (x_l, z_l, x_r, z_r) in the contact frames
    udot: np.ndarray
    cond: float

    @property
    def F(self) -> np.ndarray:
        return np.concatenate([self.F_L, self.F_C])


def solve_constraint_forces(model: RobotModel, state: GeneralizedState, tau, terrain: Terrain | None = None,
                            t: float = 0.0, terms: SystemTerms | None = None,
                            mu_s: float | None = None) -> ConstraintForces:
    """All loop and contact forces at once from the Schur complement W M^-1 J^T."""
    terms = terms or system_terms(model, state, terrain, t, mu_s)
    c = terms.cons
    gen = (model.S.T @ np.asarray(tau, dtype=float) if model.ntau else np.zeros(model.nu)) - terms.h
    MinvJT = terms.m_solve(c.J.T)
    A = c.W @ MinvJT
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > MAX_COND:
        raise SingularConstraintSystem(cond)
    Minv_gen = terms.m_solve(gen)
    F = np.linalg.solve(A, c.Vu + c.W @ Minv_gen)
    udot = Minv_gen - MinvJT @ F
    nl = c.n_loop_rows
    return ConstraintForces(F[:nl], F[nl:], udot, float(cond))


def forward_dynamics(model: RobotModel, state: GeneralizedState, tau, terrain: Terrain | None = None,
                     t: float = 0.0, terms: SystemTerms | None = None, mu_s: float | None = None) -> np.ndarray:
    return solve_constraint_forces(model, state, tau, terrain, t, terms, mu_s).udot


def acceleration_residual(terms: SystemTerms, udot) -> np.ndarray:
    """V u + W u̇ for all constraint rows."""
    return terms.cons.Vu + terms.cons.W @ udot
