"""Whole-body controller: six prioritized tasks, shared inequalities, hierarchical solve."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constraints import SystemTerms, system_terms
from .errors import Infeasible, LoopWbcError, NoContactForce, ValidationError
from .frames import ControlFrame, frame_from_kinematics
from .hqp import HierarchicalSolver, HqpSolution, InequalitySet, TaskLevel
from .lqr import LqrBalancer, LumpedPendulum, lump_pendulum
from .model import GeneralizedState, RobotModel
from .terrain import Terrain

G_ACC = 9.81
HOLD_LIMIT = 10


def control_frame(model: RobotModel, state: GeneralizedState, terrain: Terrain | None = None,
                  t: float = 0.0) -> ControlFrame:
    from .kinematics import KinematicsCache

    return frame_from_kinematics(KinematicsCache(model, state), terrain, t)


def pd_acceleration(ref, pos: float, vel: float, kp: float, kd: float) -> float:
    """kp·e + kd·ė + feedforward for a (position, velocity, acceleration) reference."""
    if kp < 0 or kd < 0:
        raise ValidationError("PD gains must be non-negative")
    p, v, a = ref
    return kp * (p - pos) + kd * (v - vel) + a


def _wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


# ---------------------------------------------------------------- config and references


@dataclass
class Gains:
    height: tuple[float, float] = (100.0, 20.0)
    roll: tuple[float, float] = (60.0, 15.5)
    yaw: tuple[float, float] = (25.0, 10.0)


@dataclass
class ControllerConfig:
    Ts: float = 0.0025
    gains: Gains = field(default_factory=Gains)
    Q: tuple[float, float, float] = (20.0, 2.0, 10.0)
    R: float = 1.0
    aggressiveness: float = 0.0
    roll_filter_tau: float = 0.2
    saturation: np.ndarray | None = None
    mu_static: float | None = None
    height_reference: str = "lowest_contact"  # or "G"

    @classmethod
    def from_dict(cls, doc: dict | None) -> "ControllerConfig":
        doc = dict(doc or {})
        g = doc.pop("gains", {}) or {}
        gains = Gains(**{k: tuple(float(x) for x in v) for k, v in g.items()})
        unknown = set(doc) - {f for f in cls.__dataclass_fields__ if f != "gains"}
        if unknown:
            raise ValidationError(f"unknown controller keys: {sorted(unknown)}")
        if "saturation" in doc and doc["saturation"] is not None:
            doc["saturation"] = np.asarray(doc["saturation"], dtype=float)
        if "Q" in doc:
            doc["Q"] = tuple(float(x) for x in doc["Q"])
        cfg = cls(gains=gains, **doc)
        if cfg.Ts <= 0:
            raise ValidationError("controller Ts must be positive")
        if cfg.height_reference not in ("lowest_contact", "G"):
            raise ValidationError("height_reference must be 'lowest_contact' or 'G'")
        if not 0.0 <= cfg.aggressiveness <= 1.0:
            raise ValidationError("aggressiveness must lie in [0, 1]")
        return cfg


@dataclass
class References:
    height: tuple[float, float, float] = (0.3, 0.0, 0.0)
    roll: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw: tuple[float, float, float] = (0.0, 0.0, 0.0)
    theta: float = 0.0
    theta_dot: float = 0.0
    v: float = 0.0
    length: float | None = None  # pendulum length L; defaults to the height reference

    def validate(self, model: RobotModel | None = None) -> None:
        vals = [*self.height, *self.roll, *self.yaw, self.theta, self.theta_dot, self.v]
        if not all(math.isfinite(x) for x in vals):
            raise ValidationError("non-finite reference")
        if abs(self.roll[0]) >= math.pi / 4:
            raise ValidationError("roll reference must stay below pi/4")
        if model is not None:
            lo, hi = model.height_range
            if not lo <= self.height[0] <= hi:
                raise ValidationError(f"height reference {self.height[0]} outside workspace [{lo}, {hi}]")


# ---------------------------------------------------------------- ZMP and roll reference


def zmp_along_los(frame: ControlFrame, F_C) -> float:
    """Normal-force-weighted contact position along the line of support, relative to G."""
    F_C = np.asarray(F_C, dtype=float)
    fl, fr = abs(min(F_C[1], 0.0)), abs(min(F_C[3], 0.0))
    if fl + fr < 1e-9:
        raise NoContactForce("no wheel is pressing on the ground")
    yl = frame.to_frame(frame.contacts[0])[1]
    yr = frame.to_frame(frame.contacts[1])[1]
    return float((fl * yl + fr * yr) / (fl + fr))


def roll_reference_for_zmp(v: float, yaw_rate: float, aggressiveness: float) -> float:
    """Quasi-static lean angle (right-handed roll about the heading) that centres the ZMP.

    A left turn at positive speed needs a negative roll, i.e. leaning to the left.
    """
    return -aggressiveness * math.atan(v * yaw_rate / G_ACC)


class RollReferenceFilter:
    """First-order low pass on the lean target."""

    def __init__(self, tau: float = 0.2, Ts: float = 0.0025, value: float = 0.0):
        self.alpha = 1.0 - math.exp(-Ts / tau) if tau > 0 else 1.0
        self.tau = tau
        self.value = value

    def update(self, target: float) -> tuple[float, float]:
        """Advance one sample; returns (filtered value, its rate)."""
        rate = (target - self.value) / self.tau if self.tau > 0 else 0.0
        self.value += self.alpha * (target - self.value)
        return self.value, rate


# ---------------------------------------------------------------- task assembly


@dataclass
class Measurements:
    frame: ControlFrame
    pend: LumpedPendulum
    height: float
    height_rate: float
    height_row: np.ndarray  # dh/du
    height_drift: float  # d/dt(dh/du) u minus the ground acceleration under the reference contact
    roll: float
    roll_rate: float
    yaw: float
    yaw_rate: float


def measure(model: RobotModel, terms: SystemTerms, terrain: Terrain | None, t: float,
            height_reference: str = "lowest_contact") -> Measurements:
    kin = terms.kin
    frame = frame_from_kinematics(kin, terrain, t)
    pend = lump_pendulum(model, kin, terrain, t, frame)
    u = kin.state.u
    R = kin.R[0]
    r = kin.p[0]
    v_base = u[0:3]
    omega = u[3:6]
    row = np.zeros(model.nu)
    if height_reference == "G":
        e = frame.z
        height = float(e @ (r - frame.origin))
        ground_v = ground_a = 0.0
        if model.wheels:
            samples = [(terrain or Terrain.flat()).query(c[:2], t) for c in frame.contacts]
            ground_v = 0.5 * sum(e @ s.velocity for s in samples)
            ground_a = 0.5 * sum(e @ s.acceleration for s in samples)
    else:
        e = np.array([0.0, 0.0, 1.0])
        k = int(np.argmin(frame.contacts[:, 2]))
        height = float(r[2] - frame.contacts[k, 2])
        s = (terrain or Terrain.flat()).query(frame.contacts[k, :2], t)
        ground_v, ground_a = float(e @ s.velocity), float(e @ s.acceleration)
    row[0:3] = e
    roll = math.asin(float(np.clip(R[2, 1], -1.0, 1.0)))
    yaw = math.atan2(frame.x[1], frame.x[0])
    return Measurements(frame, pend, height, float(e @ v_base) - ground_v, row, -ground_a, roll,
                        float(frame.x @ omega), yaw, float(frame.z @ omega))


@dataclass
class TaskStack:
    levels: list[TaskLevel]
    ineq: InequalitySet
    meas: Measurements
    height_target: float
    pitch_acc: float

    @property
    def n(self) -> int:
        return self.levels[0].A.shape[1]


def variable_slices(model: RobotModel, terms: SystemTerms) -> dict[str, slice]:
    nu, nl, nc, nt = model.nu, terms.cons.n_loop_rows, terms.cons.n_contact_rows, model.ntau
    return {
        "udot": slice(0, nu),
        "F_L": slice(nu, nu + nl),
        "F_C": slice(nu + nl, nu + nl + nc),
        "tau": slice(nu + nl + nc, nu + nl + nc + nt),
    }


def height_target(refs: References, theta: float, psi: float) -> float:
    L = refs.height[0] if refs.length is None else refs.length
    return L * math.cos(theta) * math.cos(psi)


def build_task_stack(model: RobotModel, terms: SystemTerms, refs: References, pitch_acc: float,
                     config: ControllerConfig | None = None, terrain: Terrain | None = None, t: float = 0.0,
                     meas: Measurements | None = None) -> TaskStack:
    cfg = config or ControllerConfig()
    meas = meas or measure(model, terms, terrain, t, cfg.height_reference)
    c = terms.cons
    sl = variable_slices(model, terms)
    nu = model.nu
    n = sl["tau"].stop
    u = terms.kin.state.u

    # 1: constrained dynamics
    m_c = c.W.shape[0]
    A1 = np.zeros((nu + m_c, n))
    A1[:nu, sl["udot"]] = terms.M
    A1[:nu, sl["F_L"]] = c.loops.J_L.T
    if c.contacts is not None:
        A1[:nu, sl["F_C"]] = c.contacts.J_A.T + c.contacts.J_F.T @ c.C_F
    A1[:nu, sl["tau"]] = -model.S.T
    A1[nu:, sl["udot"]] = c.W
    b1 = np.concatenate([-terms.h, -c.Vu])

    def motion_row(jac, rhs, name):
        A = np.zeros((1, n))
        A[0, sl["udot"]] = jac
        return TaskLevel(A, [rhs], name)

    # 2: base height, inverted-pendulum-like target
    target = height_target(refs, meas.pend.theta, meas.roll)
    kp, kd = cfg.gains.height
    h_acc = pd_acceleration((target, refs.height[1], refs.height[2]), meas.height, meas.height_rate, kp, kd)
    L2 = motion_row(meas.height_row, h_acc - meas.height_drift, "height")

    # 3: roll about the heading
    kp, kd = cfg.gains.roll
    r_acc = pd_acceleration(refs.roll, meas.roll, meas.roll_rate, kp, kd)
    row = np.zeros(nu)
    row[3:6] = meas.frame.x
    L3 = motion_row(row, r_acc, "roll")

    # 4: lumped pitch from the LQR
    y = meas.frame.y
    L4 = motion_row(y @ meas.pend.J_R, pitch_acc - y @ meas.pend.J_R_drift, "pitch")

    # 5: yaw
    kp, kd = cfg.gains.yaw
    err = _wrap(refs.yaw[0] - meas.yaw)
    y_acc = kp * err + kd * (refs.yaw[1] - meas.yaw_rate) + refs.yaw[2]
    row = np.zeros(nu)
    row[3:6] = meas.frame.z
    L5 = motion_row(row, y_acc, "yaw")

    # 6: torque minimization
    A6 = np.zeros((model.ntau, n))
    A6[:, sl["tau"]] = np.eye(model.ntau)
    L6 = TaskLevel(A6, np.zeros(model.ntau), "torque")

    levels = [TaskLevel(A1, b1, "dynamics"), L2, L3, L4, L5, L6]
    return TaskStack(levels, build_inequalities(model, terms, cfg), meas, target, pitch_acc)


def build_inequalities(model: RobotModel, terms: SystemTerms, config: ControllerConfig | None = None) -> InequalitySet:
    """Torque saturation, unilateral wheel contact and static friction rows."""
    cfg = config or ControllerConfig()
    sl = variable_slices(model, terms)
    n = sl["tau"].stop
    sat = model.saturation if cfg.saturation is None else np.asarray(cfg.saturation, dtype=float)
    mu = model.mu_static if cfg.mu_static is None else cfg.mu_static
    rows, d = [], []
    for i in range(model.ntau):
        for sign in (1.0, -1.0):
            r = np.zeros(n)
            r[sl["tau"].start + i] = sign
            rows.append(r)
            d.append(sat[i])
    fc = sl["F_C"].start
    if terms.cons.n_contact_rows:
        for k in (1, 3):
            r = np.zeros(n)
            r[fc + k] = 1.0
            rows.append(r)
            d.append(0.0)
        for k in (0, 2):
            for sign in (1.0, -1.0):
                r = np.zeros(n)
                r[fc + k] = sign
                r[fc + k + 1] = mu
                rows.append(r)
                d.append(0.0)
    return InequalitySet(np.array(rows).reshape(-1, n), np.array(d))


# ---------------------------------------------------------------- controller


@dataclass
class WbcDecision:
    x: np.ndarray
    udot: np.ndarray
    F_L: np.ndarray
    F_C: np.ndarray
    tau: np.ndarray
    residuals: list[float]
    zmp: float
    dynamics_residual: float
    hold: bool = False  # torques are a held or zeroed command, not a fresh solution
    failed: bool = False
    solution: HqpSolution | None = None
    stack: TaskStack | None = None
    error: str | None = None


class Controller:
    """One instance per simulated robot: LQR warm start, HQP warm start, roll filter and hold logic."""

    def __init__(self, model: RobotModel, config: ControllerConfig | None = None, dump_dir=None):
        self.model = model
        self.config = config or ControllerConfig()
        self.lqr = LqrBalancer(self.config.Q, self.config.R, self.config.Ts)
        self.solver = HierarchicalSolver(dump_dir=dump_dir)
        self.roll_filter = RollReferenceFilter(self.config.roll_filter_tau, self.config.Ts)
        self.previous_tau = np.zeros(model.ntau)
        self.failures = 0
        self.failed = False
        self.last_gains = None

    def lean_reference(self, meas: Measurements, aggressiveness: float | None = None) -> tuple[float, float, float]:
        a = self.config.aggressiveness if aggressiveness is None else aggressiveness
        psi, rate = self.roll_filter.update(roll_reference_for_zmp(meas.pend.v, meas.yaw_rate, a))
        return psi, rate, 0.0

    def step(self, state: GeneralizedState, refs: References, terrain: Terrain | None = None, t: float = 0.0,
             auto_roll: bool = True, aggressiveness: float | None = None,
             terms: SystemTerms | None = None) -> WbcDecision:
        try:
            terms = terms or system_terms(self.model, state, terrain, t)
            meas = measure(self.model, terms, terrain, t, self.config.height_reference)
            if auto_roll:
                refs = References(refs.height, self.lean_reference(meas, aggressiveness), refs.yaw, refs.theta,
                                  refs.theta_dot, refs.v, refs.length)
            gains = self.lqr.gains(meas.pend)
            self.last_gains = gains
            k = gains.k
            pitch_acc = (k[0] * (refs.theta - meas.pend.theta) + k[1] * (refs.theta_dot - meas.pend.theta_dot)
                         + k[2] * (refs.v - meas.pend.v))
            stack = build_task_stack(self.model, terms, refs, pitch_acc, self.config, terrain, t, meas)
            sol = self.solver.solve(stack.levels, stack.ineq)
        except (Infeasible, LoopWbcError, np.linalg.LinAlgError) as exc:
            return self._hold(str(exc))
        sl = variable_slices(self.model, terms)
        x = sol.x
        F_C = x[sl["F_C"]]
        try:
            zmp = zmp_along_los(meas.frame, F_C)
        except NoContactForce:
            zmp = float("nan")
        self.failures = 0
        tau = x[sl["tau"]].copy()
        self.previous_tau = tau
        dyn = float(np.abs(stack.levels[0].A @ x - stack.levels[0].b).max())
        return WbcDecision(x, x[sl["udot"]], x[sl["F_L"]], F_C, tau, sol.residuals, zmp, dyn, solution=sol,
                           stack=stack)

    def _hold(self, message: str) -> WbcDecision:
        self.failures += 1
        if self.failures > HOLD_LIMIT:
            self.failed = True
            self.previous_tau = np.zeros(self.model.ntau)
        nan = np.full(0, np.nan)
        return WbcDecision(nan, nan, nan, np.full(4, np.nan), self.previous_tau.copy(), [], float("nan"),
                           float("nan"), hold=True, failed=self.failed, error=message)


def wbc_step(model: RobotModel, state: GeneralizedState, refs: References, terrain: Terrain | None = None,
             t: float = 0.0, controller: Controller | None = None) -> WbcDecision:
    """Single controller evaluation; pass a persistent ``controller`` to keep warm starts."""
    controller = controller or Controller(model)
    return controller.step(state, refs, terrain, t, auto_roll=False)
