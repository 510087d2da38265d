"""LQR pitch balancing on a lumped wheeled inverted pendulum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, solve_discrete_lyapunov

from .dynamics import world_inertias
from .errors import DegeneratePendulum, NoConvergence, NotStabilizable
from .frames import ControlFrame, frame_from_kinematics
from .kinematics import KinematicsCache
from .model import GRAVITY, RobotModel
from .so3 import skew
from .terrain import Terrain

G_ACC = float(-GRAVITY[2])


@dataclass
class LumpedPendulum:
    mass: float
    inertia: np.ndarray  # composite inertia about the lumped CoM, world frame
    inertia_sum: np.ndarray  # sum of body inertias about their own CoMs (average angular momentum weights)
    com: np.ndarray
    length: float
    theta: float
    theta_dot: float
    v: float
    J_R: np.ndarray  # lumped rotational Jacobian, world frame
    J_R_drift: np.ndarray  # d/dt(J_R) u
    wheel_mass: float
    wheel_inertia: float  # about the axle, summed over wheels
    radius: float
    frame: ControlFrame

    @property
    def pitch_inertia(self) -> float:
        y = self.frame.y
        return float(y @ self.inertia @ y)


def lump_pendulum(model: RobotModel, kin: KinematicsCache, terrain: Terrain | None = None, t: float = 0.0,
                  frame: ControlFrame | None = None) -> LumpedPendulum:
    """Lump every non-wheel body into one pendulum using average angular momentum."""
    frame = frame or frame_from_kinematics(kin, terrain, t)
    wheels = set(model.wheel_bodies)
    idx = [i for i in range(len(model.bodies)) if i not in wheels]
    m = np.array([model.bodies[i].mass for i in idx])
    mass = float(m.sum())
    com = (m[:, None] * kin.com[idx]).sum(axis=0) / mass

    Iw = world_inertias(model, kin)
    I_k = Iw[idx]
    d = kin.com[idx] - com
    parallel = m[:, None, None] * (np.einsum("bi,bi->b", d, d)[:, None, None] * np.eye(3) - np.einsum("bi,bj->bij", d, d))
    inertia = (I_k + parallel).sum(axis=0)
    I_sum = I_k.sum(axis=0)

    _, Jr = kin.body_jacobians()
    w = kin.omega[idx]
    Iinv = np.linalg.inv(I_sum)
    J_R = Iinv @ np.einsum("bij,bjk->ik", I_k, Jr[idx])
    w_pi = J_R @ kin.state.u
    # d/dt of the inertia-weighted average, rotating tensors included
    dI = np.einsum("bij,bjk->bik", np.array([skew(x) for x in w]), I_k)
    dI = dI - dI.transpose(0, 2, 1)
    momentum_rate = np.einsum("bij,bj->i", dI, w) + np.einsum("bij,bj->i", I_k, kin.angular_drift[idx])
    J_R_drift = Iinv @ (momentum_rate - dI.sum(axis=0) @ w_pi)

    hubs = np.array([kin.p[b] for b in model.wheel_bodies])
    axle_mid = hubs.mean(axis=0)
    length = float(np.linalg.norm(com - axle_mid))
    r = com - frame.origin
    r -= (r @ frame.y) * frame.y
    theta = float(np.arctan2(r @ frame.x, r @ frame.z))
    hub_vel = np.array([kin.point_velocity(b, kin.p[b]) for b in model.wheel_bodies])
    v = float(hub_vel.mean(axis=0) @ frame.x)

    wheel_mass = float(sum(model.bodies[b].mass for b in model.wheel_bodies))
    wheel_inertia = float(sum(kin.R[b][:, 1] @ Iw[b] @ kin.R[b][:, 1] for b in model.wheel_bodies))
    radius = float(np.mean([w.radius for w in model.wheels]))
    return LumpedPendulum(mass, inertia, I_sum, com, length, theta, float(frame.y @ w_pi), v, J_R, J_R_drift,
                          wheel_mass, wheel_inertia, radius, frame)


@dataclass
class SimplifiedLinearModel:
    A: np.ndarray
    B: np.ndarray
    Ts: float
    Ad: np.ndarray
    Bd: np.ndarray

    @property
    def a31(self) -> float:
        return float(self.A[2, 0])

    @property
    def b31(self) -> float:
        return float(self.B[2, 0])


def pendulum_coefficients(mass, pitch_inertia, length, wheel_mass, wheel_inertia, radius, g=G_ACC):
    """(a31, a32, b31) of the wheeled inverted pendulum with the pitch acceleration as input."""
    if length <= 1e-3:
        raise DegeneratePendulum(f"pendulum length {length:.2e} m too small")
    D = radius * (wheel_mass + mass + wheel_inertia / radius**2) + mass * length
    a31 = mass * g * length / D
    b31 = -(pitch_inertia + mass * length**2 + radius * mass * length) / D
    return a31, 0.0, b31


def linearize_simplified(pend: LumpedPendulum, Ts: float = 0.0025) -> SimplifiedLinearModel:
    a31, a32, b31 = pendulum_coefficients(pend.mass, pend.pitch_inertia, pend.length, pend.wheel_mass,
                                          pend.wheel_inertia, pend.radius)
    A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [a31, a32, 0.0]])
    B = np.array([[0.0], [1.0], [b31]])
    Ad, Bd = discretize_zoh(A, B, Ts)
    return SimplifiedLinearModel(A, B, Ts, Ad, Bd)


def discretize_zoh(A, B, Ts):
    """Zero-order-hold discretization through the augmented matrix exponential."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n, m = B.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A
    aug[:n, n:] = B
    E = expm(aug * Ts)
    return E[:n, :n], E[:n, n:]


@dataclass
class LqrGains:
    K: np.ndarray  # (1, 3) for the pendulum model
    P: np.ndarray
    residual: float
    spectral_radius: float

    @property
    def k(self) -> np.ndarray:
        return self.K.reshape(-1)


def dare_residual(A, B, Q, R, P) -> float:
    BtPA = B.T @ P @ A
    res = A.T @ P @ A - P - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA) + Q
    return float(np.abs(res).max())


def _gain(A, B, R, P):
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def _check_stabilizable(A, B):
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1.0 - 1e-12:
            if np.linalg.matrix_rank(np.hstack([A - lam * np.eye(n), B]), tol=1e-10) < n:
                raise NotStabilizable(f"unstable mode {lam:.6g} is not controllable")


def _doubling(A, B, Q, R, tol, max_iter):
    Ak = A.copy()
    Gk = B @ np.linalg.solve(R, B.T)
    Hk = Q.copy()
    I = np.eye(A.shape[0])
    for _ in range(max_iter):
        Winv = np.linalg.inv(I + Gk @ Hk)
        A_next = Ak @ Winv @ Ak
        G_next = Gk + Ak @ Winv @ Gk @ Ak.T
        H_next = Hk + Ak.T @ Hk @ Winv @ Ak
        done = np.abs(H_next - Hk).max() <= tol * max(1.0, np.abs(H_next).max())
        Ak, Gk, Hk = A_next, 0.5 * (G_next + G_next.T), 0.5 * (H_next + H_next.T)
        if done:
            return Hk
    raise NoConvergence("doubling iteration did not converge")


def _newton(A, B, Q, R, P, tol, max_iter=30):
    """Hewer iteration from a stabilizing P; each step solves a discrete Lyapunov equation."""
    for _ in range(max_iter):
        K = _gain(A, B, R, P)
        Acl = A - B @ K
        if np.abs(np.linalg.eigvals(Acl)).max() >= 1.0:
            return None
        P_new = solve_discrete_lyapunov(Acl.T, Q + K.T @ R @ K)
        P_new = 0.5 * (P_new + P_new.T)
        delta = np.abs(P_new - P).max()
        P = P_new
        if delta <= tol * max(1.0, np.abs(P).max()):
            return P
    return P


def solve_dare(A, B, Q, R, P0=None, tol: float = 1e-12, max_iter: int = 1_000_000) -> LqrGains:
    """Stabilizing solution of the discrete algebraic Riccati equation and the LQR gain.

    Cold starts use the structure-preserving doubling iteration; a previous
    solution ``P0`` warm-starts Newton refinement instead. Either way the
    result is polished with Newton steps.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    _check_stabilizable(A, B)
    P = None
    if P0 is not None:
        P = _newton(A, B, Q, R, np.asarray(P0, dtype=float), tol)
    if P is None:
        P = _doubling(A, B, Q, R, tol, max_iter)
        P = _newton(A, B, Q, R, P, tol, max_iter=3) if np.any(Q) else P
        if P is None:
            raise NoConvergence("Riccati solution is not stabilizing")
    K = _gain(A, B, R, P)
    rho = float(np.abs(np.linalg.eigvals(A - B @ K)).max())
    return LqrGains(K, P, dare_residual(A, B, Q, R, P), rho)


def lqr_pitch_command(K, refs, pend: LumpedPendulum) -> float:
    """Desired pitch acceleration from the tracking law on (theta, theta_dot, v)."""
    k = np.asarray(K, dtype=float).reshape(-1)
    theta_ref, theta_dot_ref, v_ref = refs
    return float(k[0] * (theta_ref - pend.theta) + k[1] * (theta_dot_ref - pend.theta_dot) + k[2] * (v_ref - pend.v))


class LqrBalancer:
    """Re-linearizes, discretizes and solves the DARE every control step, warm-started."""

    def __init__(self, Q=(20.0, 2.0, 10.0), R=1.0, Ts: float = 0.0025):
        self.Q = np.diag(np.asarray(Q, dtype=float))
        self.R = np.atleast_2d(float(R))
        self.Ts = Ts
        self.P = None
        self.last: LqrGains | None = None
        self.linear: SimplifiedLinearModel | None = None

    def gains(self, pend: LumpedPendulum) -> LqrGains:
        self.linear = linearize_simplified(pend, self.Ts)
        gains = solve_dare(self.linear.Ad, self.linear.Bd, self.Q, self.R, P0=self.P)
        self.P = gains.P
        self.last = gains
        return gains

    def command(self, pend: LumpedPendulum, theta_ref=0.0, theta_dot_ref=0.0, v_ref=0.0) -> float:
        gains = self.gains(pend)
        return lqr_pitch_command(gains.K, (theta_ref, theta_dot_ref, v_ref), pend)
