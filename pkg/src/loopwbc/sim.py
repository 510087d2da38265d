"""Scenario-driven forward simulation with the whole-body controller in the loop."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .assembly import standing_state
from .constraints import SystemTerms, solve_constraint_forces, system_terms
from .dynamics import gravity_energy, kinetic_energy, spring_energy
from .errors import EnergyBlowup, LoopWbcError, ScenarioFailed, ValidationError
from .lqr import lump_pendulum
from .model import GeneralizedState, RobotModel, load_model, resolve_data_path, validate_state
from .so3 import exp_map, orthonormalize
from .terrain import Terrain
from .wbc import Controller, ControllerConfig, References, zmp_along_los

log = logging.getLogger("loopwbc")

MAX_KINETIC_ENERGY = 1e6
LOOP_DRIFT_WARN = 1e-4


# ---------------------------------------------------------------- integration


def integrate_step(model: RobotModel, state: GeneralizedState, tau, dt: float, terrain: Terrain | None = None,
                   t: float = 0.0, terms: SystemTerms | None = None, mu_s: float | None = None,
                   udot=None) -> GeneralizedState:
    """Semi-implicit Euler: velocities first, then positions from the new velocities."""
    if udot is None:
        terms = terms or system_terms(model, state, terrain, t, mu_s)
        udot = solve_constraint_forces(model, state, tau, terrain, t, terms, mu_s).udot
    u = state.u + dt * udot
    nb = model.nbase
    if model.floating_base:
        r = state.r + dt * u[0:3]
        R = orthonormalize(exp_map(dt * u[3:6]) @ state.R)
    else:
        r, R = state.r.copy(), state.R.copy()
    phi = state.phi + dt * u[nb:]
    new = GeneralizedState(r, R, phi, u)
    # the pre-step mass matrix is accurate enough for a blow-up guard
    ek = 0.5 * float(u @ terms.M @ u) if terms is not None else kinetic_energy(model, new)
    if not np.isfinite(ek) or ek > MAX_KINETIC_ENERGY:
        raise EnergyBlowup(f"kinetic energy {ek:.3e} J exceeds {MAX_KINETIC_ENERGY:.0e} J")
    return new


def constrained_impulse(model: RobotModel, terms: SystemTerms, body: int, point, impulse) -> np.ndarray:
    """Velocity jump from a point impulse with every loop and rolling constraint kept in force."""
    JP, _ = terms.kin.point_jacobian(body, point)
    gen = JP.T @ np.asarray(impulse, dtype=float)
    c = terms.cons
    Minv_gen = terms.m_solve(gen)
    MinvJT = terms.m_solve(c.J.T)
    lam = np.linalg.solve(c.W @ MinvJT, c.W @ Minv_gen)
    return Minv_gen - MinvJT @ lam


# ---------------------------------------------------------------- scenario


class Timeline:
    """Piecewise-linear signal given as [[t, value], ...]; held constant outside."""

    def __init__(self, points, default: float = 0.0):
        if points is None:
            points = [[0.0, default]]
        if isinstance(points, (int, float)):
            points = [[0.0, float(points)]]
        arr = np.asarray(points, dtype=float).reshape(-1, 2)
        if np.any(np.diff(arr[:, 0]) < 0):
            raise ValidationError("timeline times must be non-decreasing")
        self.t = arr[:, 0]
        self.v = arr[:, 1]

    def __call__(self, t: float) -> float:
        return float(np.interp(t, self.t, self.v))

    def slope(self, t: float) -> float:
        i = int(np.searchsorted(self.t, t, side="right"))
        if i == 0 or i >= len(self.t):
            return 0.0
        dt = self.t[i] - self.t[i - 1]
        return float((self.v[i] - self.v[i - 1]) / dt) if dt > 0 else 0.0


@dataclass
class Disturbance:
    time: float
    impulse: float  # N·s
    direction: np.ndarray
    body: str = "base"
    point: np.ndarray | None = None  # body-frame point, default: body CoM


@dataclass
class Scenario:
    name: str
    model_path: str
    duration: float
    dt: float = 0.0005
    initial: dict = field(default_factory=dict)
    references: dict = field(default_factory=dict)
    controller: ControllerConfig | None = field(default_factory=ControllerConfig)
    disturbances: list[Disturbance] = field(default_factory=list)
    terrain: Terrain = field(default_factory=Terrain.flat)
    mu_sliding: float | None = None
    output: str | None = None
    upright_limit: float = 0.5

    log_period: float = 0.0025  # logging period of passive runs

    @property
    def Ts(self) -> float:
        return self.controller.Ts if self.controller else max(self.log_period, self.dt)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "Scenario":
        known = {"name", "model", "duration", "dt", "initial", "references", "controller", "passive",
                 "disturbances", "terrain", "mu_sliding", "output", "upright_limit", "description"}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown scenario keys: {sorted(unknown)}")
        for key in ("model", "duration"):
            if key not in doc:
                raise ValidationError(f"scenario: missing '{key}'")
        model_path = doc["model"]
        if base_dir is not None and not Path(model_path).is_absolute() and (base_dir / model_path).exists():
            model_path = str(base_dir / model_path)
        ctrl = None if doc.get("passive", False) else ControllerConfig.from_dict(doc.get("controller"))
        dist = []
        for i, d in enumerate(doc.get("disturbances", [])):
            try:
                direction = np.asarray(d.get("direction", [1.0, 0.0, 0.0]), dtype=float)
                direction = direction / np.linalg.norm(direction)
                dist.append(Disturbance(float(d["time"]), float(d["impulse"]), direction, d.get("body", "base"),
                                        None if d.get("point") is None else np.asarray(d["point"], dtype=float)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"disturbances[{i}]: {exc}") from exc
        sc = cls(
            name=doc.get("name", "scenario"),
            model_path=model_path,
            duration=float(doc["duration"]),
            dt=float(doc.get("dt", 0.0005)),
            initial=dict(doc.get("initial", {})),
            references=dict(doc.get("references", {})),
            controller=ctrl,
            disturbances=dist,
            terrain=Terrain.from_dict(doc.get("terrain")),
            mu_sliding=None if doc.get("mu_sliding") is None else float(doc["mu_sliding"]),
            output=doc.get("output"),
            upright_limit=float(doc.get("upright_limit", 0.5)),
        )
        sc.validate()
        return sc

    def validate(self) -> None:
        if self.duration <= 0:
            raise ValidationError("duration must be positive")
        if self.dt <= 0 or self.dt > self.Ts + 1e-15:
            raise ValidationError("dt must be positive and no larger than the controller period")
        ratio = self.Ts / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValidationError("controller period must be an integer multiple of dt")
        unknown = set(self.references) - {"v", "yaw_rate", "height", "aggressiveness", "length"}
        if unknown:
            raise ValidationError(f"unknown reference timelines: {sorted(unknown)}")


def load_scenario(path) -> Scenario:
    p = resolve_data_path(path)
    try:
        doc = json.loads(Path(p).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{p}: {exc}") from exc
    return Scenario.from_dict(doc, Path(p).parent)


def initial_state(model: RobotModel, scenario: Scenario) -> GeneralizedState:
    init = scenario.initial
    if "state" in init:
        s = GeneralizedState.from_dict(init["state"])
        validate_state(model, s)
        return s
    return standing_state(model, scenario.terrain, hip=init.get("hip"), position=tuple(init.get("position", (0, 0))),
                          yaw=float(init.get("yaw", 0.0)), pitch=init.get("pitch"),
                          speed=float(init.get("speed", 0.0)), yaw_rate=float(init.get("yaw_rate", 0.0)))


# ---------------------------------------------------------------- logging


def log_columns(model: RobotModel) -> list[str]:
    joints = [j.name for j in model.joints]
    acts = [model.joints[j].name for j in model.actuators]
    cols = ["t", "r_x", "r_y", "r_z", "quat_w", "quat_x", "quat_y", "quat_z"]
    cols += [f"q_{n}" for n in joints]
    cols += ["v_x", "v_y", "v_z", "w_x", "w_y", "w_z"] + [f"dq_{n}" for n in joints]
    cols += [f"tau_{n}" for n in acts]
    cols += [f"F_L_{lp.name}_{a}" for lp in model.loops for a in ("x", "z")]
    cols += [f"F_C_{w.name}_{a}" for w in model.wheels for a in ("x", "z")]
    cols += [f"sigma_{w.name}" for w in model.wheels]
    cols += ["G_x", "G_y", "G_z", "theta", "v", "psi", "zmp"]
    cols += ["res_dynamics", "res_height", "res_roll", "res_pitch", "res_yaw", "res_torque"]
    cols += ["loop_gap", "rolling_residual", "accel_residual"]
    cols += ["E_kin", "E_grav", "E_spring", "E_total", "hold"]
    return cols


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class SimLog:
    columns: list[str]
    rows: list[list[float]] = field(default_factory=list)

    def append(self, row) -> None:
        if len(row) != len(self.columns):
            raise ValueError(f"log row has {len(row)} entries, schema has {len(self.columns)}")
        self.rows.append([float(x) for x in row])

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        lines += [",".join(_fmt(x) for x in r) for r in self.rows]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_csv())


@dataclass
class RunSummary:
    name: str
    success: bool
    upright: bool
    failure: str | None
    failure_time: float | None
    steps: int
    control_steps: int
    max_abs_theta: float
    max_loop_gap: float
    max_rolling_residual: float
    max_accel_residual: float
    max_ineq_violation: float
    max_wbc_dynamics_residual: float
    max_spectral_radius: float
    max_dare_residual: float
    held_steps: int
    energy_drift: float
    mean_control_ms: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RunResult:
    log: SimLog
    summary: RunSummary
    final_state: GeneralizedState


# ---------------------------------------------------------------- runner


def _references(scenario: Scenario, t: float, yaw_ref: float, yaw_rate_ref: float, h0: float) -> References:
    refs = scenario.references
    height = Timeline(refs.get("height"), h0)
    length = refs.get("length")
    return References(
        height=(height(t), height.slope(t), 0.0),
        yaw=(yaw_ref, yaw_rate_ref, 0.0),
        v=Timeline(refs.get("v"), 0.0)(t),
        length=None if length is None else Timeline(length)(t),
    )


def run_scenario(scenario: Scenario, model: RobotModel | None = None, dump_qp=None,
                 raise_on_failure: bool = False) -> RunResult:
    """Simulate a scenario; returns the log and a summary with success flags."""
    model = model or load_model(scenario.model_path)
    if scenario.mu_sliding is not None:
        model = model.replace(mu_sliding=scenario.mu_sliding)
    terrain = scenario.terrain
    state = initial_state(model, scenario)
    dt = scenario.dt
    n_steps = int(round(scenario.duration / dt))
    n_sub = int(round(scenario.Ts / dt))
    controller = Controller(model, scenario.controller, dump_dir=dump_qp) if scenario.controller else None
    refs_doc = scenario.references
    yaw_rate_tl = Timeline(refs_doc.get("yaw_rate"), 0.0)
    aggr_tl = Timeline(refs_doc.get("aggressiveness"), scenario.controller.aggressiveness if controller else 0.0)
    yaw_ref = math.atan2(state.R[1, 0], state.R[0, 0])
    h0 = float(state.r[2])
    if controller is not None and "height" not in refs_doc:
        from .wbc import measure

        h0 = measure(model, system_terms(model, state, terrain, 0.0), terrain, 0.0,
                     controller.config.height_reference).height

    slog = SimLog(log_columns(model))
    tau = np.zeros(model.ntau)
    pending = sorted(scenario.disturbances, key=lambda d: d.time)
    stats = dict(theta=0.0, gap=0.0, roll=0.0, acc=0.0, ineq=0.0, dyn=0.0, rho=0.0, dare=0.0, held=0)
    e0 = None
    e_dev = 0.0
    ctrl_time = 0.0
    ctrl_steps = 0
    failure, fail_t = None, None
    warned_gap = False
    decision = None

    for k in range(n_steps + 1):
        t = k * dt
        terms = system_terms(model, state, terrain, t)
        control_tick = k % n_sub == 0
        if control_tick:
            pend = lump_pendulum(model, terms.kin, terrain, t)

        if control_tick and controller is not None:
            yaw_rate_ref = yaw_rate_tl(t)
            refs = _references(scenario, t, yaw_ref, yaw_rate_ref, h0)
            t0 = time.perf_counter()
            decision = controller.step(state, refs, terrain, t, auto_roll=True, aggressiveness=aggr_tl(t),
                                       terms=terms)
            ctrl_time += time.perf_counter() - t0
            ctrl_steps += 1
            yaw_ref += yaw_rate_ref * scenario.Ts
            tau = decision.tau
            if decision.hold:
                stats["held"] += 1
                log.warning("t=%.4f controller hold: %s", t, decision.error)
                if decision.failed and failure is None:
                    failure, fail_t = "infeasible streak", t
            else:
                stats["ineq"] = max(stats["ineq"], decision.solution.ineq_violation)
                stats["dyn"] = max(stats["dyn"], decision.dynamics_residual)
                g = controller.last_gains
                stats["rho"] = max(stats["rho"], g.spectral_radius)
                stats["dare"] = max(stats["dare"], g.residual)

        forces = solve_constraint_forces(model, state, tau, terrain, t, terms)
        acc_res = float(np.abs(terms.cons.W @ forces.udot + terms.cons.Vu).max())
        gap = float(np.abs(terms.cons.loops.gap).max())
        roll_res = float(np.abs(terms.cons.contacts.rolling_velocity).max()) if terms.cons.contacts else 0.0
        stats["acc"] = max(stats["acc"], acc_res)
        stats["gap"] = max(stats["gap"], gap)
        stats["roll"] = max(stats["roll"], roll_res)
        if control_tick:
            stats["theta"] = max(stats["theta"], abs(pend.theta))
        if gap > LOOP_DRIFT_WARN and not warned_gap:
            log.warning("t=%.4f loop closure drift %.3e m exceeds %.0e m", t, gap, LOOP_DRIFT_WARN)
            warned_gap = True

        ek = kinetic_energy(model, state, terms.kin)
        eg = gravity_energy(model, state, terms.kin)
        es = spring_energy(model, state)
        et = ek + eg + es
        if e0 is None:
            e0 = et
        e_dev = max(e_dev, abs(et - e0))

        if control_tick:
            psi = math.asin(float(np.clip(state.R[2, 1], -1.0, 1.0)))
            try:
                zmp = zmp_along_los(pend.frame, forces.F_C) if model.wheels else float("nan")
            except LoopWbcError:
                zmp = float("nan")
            res = decision.residuals if decision is not None and decision.residuals else [float("nan")] * 6
            sig = [g.sigma for g in terms.cons.contacts.geometry] if terms.cons.contacts else []
            quat = Rotation.from_matrix(state.R).as_quat()  # x, y, z, w
            row = [t, *state.r, quat[3], quat[0], quat[1], quat[2], *state.phi, *state.u, *tau, *forces.F_L,
                   *forces.F_C, *sig, *pend.frame.origin, pend.theta, pend.v, psi, zmp, *res[:6]]
            row += [gap, roll_res, acc_res, ek, eg, es, et, float(decision.hold) if decision else 0.0]
            slog.append(row)

        if control_tick and abs(pend.theta) >= scenario.upright_limit and failure is None:
            failure, fail_t = "fall", t
        if failure is not None and controller is not None:
            break
        if k == n_steps:
            break

        while pending and pending[0].time < t + dt - 1e-12:
            d = pending.pop(0)
            if d.time < t - 1e-12:
                continue
            body = model.body_index(d.body)
            local = model.bodies[body].com if d.point is None else d.point
            p = terms.kin.body_point(body, local)
            state = state.copy()
            state.u = state.u + constrained_impulse(model, terms, body, p, d.impulse * d.direction)
            forces = solve_constraint_forces(model, state, tau, terrain, t)
        try:
            state = integrate_step(model, state, tau, dt, terrain, t, terms=terms, udot=forces.udot)
        except EnergyBlowup:
            failure, fail_t = "energy blowup", t
            break

    summary = RunSummary(
        name=scenario.name,
        success=failure is None,
        upright=failure != "fall" and stats["theta"] < scenario.upright_limit,
        failure=failure,
        failure_time=fail_t,
        steps=k,
        control_steps=ctrl_steps,
        max_abs_theta=stats["theta"],
        max_loop_gap=stats["gap"],
        max_rolling_residual=stats["roll"],
        max_accel_residual=stats["acc"],
        max_ineq_violation=stats["ineq"],
        max_wbc_dynamics_residual=stats["dyn"],
        max_spectral_radius=stats["rho"],
        max_dare_residual=stats["dare"],
        held_steps=stats["held"],
        energy_drift=e_dev / abs(e0) if e0 else 0.0,
        mean_control_ms=1e3 * ctrl_time / ctrl_steps if ctrl_steps else 0.0,
    )
    if scenario.output:
        slog.write(scenario.output)
    if failure is not None and raise_on_failure:
        raise ScenarioFailed(failure, fail_t)
    return RunResult(slog, summary, state)
