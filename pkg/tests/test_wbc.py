import math

import numpy as np
import pytest

from conftest import random_state
from loopwbc.constraints import solve_constraint_forces, system_terms
from loopwbc.errors import Infeasible, NoContactForce, ValidationError
from loopwbc.frames import frame_from_kinematics
from loopwbc.kinematics import KinematicsCache
from loopwbc.wbc import (Controller, ControllerConfig, References, RollReferenceFilter, build_task_stack,
                         height_target, measure, pd_acceleration, roll_reference_for_zmp, wbc_step,
                         zmp_along_los)


def hold_refs(model, state):
    h = measure(model, system_terms(model, state), None, 0.0).height
    return References(height=(h, 0.0, 0.0))


def test_standing_equilibrium(model, standing):
    d = wbc_step(model, standing, hold_refs(model, standing))
    assert not d.hold
    assert np.abs(d.udot).max() < 1e-9
    assert np.abs(d.tau).max() < 1e-9
    assert d.F_C[1] == pytest.approx(-model.total_mass * 9.81 / 2, rel=1e-9)
    assert d.dynamics_residual < 1e-10
    assert max(d.residuals) < 1e-9
    assert abs(d.zmp) < 1e-9


def test_decision_is_consistent_with_forward_dynamics(model):
    # the torques chosen by the controller reproduce its own accelerations and forces
    rng = np.random.default_rng(0)
    ctrl = Controller(model)
    for _ in range(8):
        s = random_state(model, rng, spread=0.2, speed=0.3)
        refs = References(height=(0.35, 0.0, 0.0), v=rng.uniform(-1, 1), yaw=(rng.uniform(-1, 1), 0.0, 0.0))
        d = ctrl.step(s, refs, auto_roll=False)
        assert not d.hold
        f = solve_constraint_forces(model, s, d.tau)
        assert np.abs(f.udot - d.udot).max() < 1e-7 * (1 + np.abs(d.udot).max())
        assert np.abs(np.concatenate([f.F_L, f.F_C]) - np.concatenate([d.F_L, d.F_C])).max() < 1e-6
        assert d.dynamics_residual < 1e-8
        assert d.solution.ineq_violation < 1e-8


def test_motion_tasks_are_realized_when_feasible(model, standing):
    refs = hold_refs(model, standing)
    refs = References(height=(refs.height[0] + 0.01, 0, 0), yaw=(0.1, 0, 0), v=0.3)
    d = wbc_step(model, standing, refs)
    assert max(d.residuals[:5]) < 1e-8
    stack = d.stack
    for level in stack.levels[1:5]:
        assert abs(level.A @ d.x - level.b).max() < 1e-8


def test_saturation_is_respected(model, standing):
    cfg = ControllerConfig(saturation=np.array([0.5, 0.5, 0.05, 0.05]))
    refs = References(height=(0.30, 0.0, 0.0), v=2.0)
    d = Controller(model, cfg).step(standing, refs, auto_roll=False)
    assert not d.hold
    assert np.all(np.abs(d.tau) <= cfg.saturation + 1e-9)
    assert d.dynamics_residual < 1e-8
    assert max(d.residuals[1:]) > 1e-3  # something had to give


def test_friction_and_unilateral_rows(model):
    rng = np.random.default_rng(1)
    ctrl = Controller(model)
    for _ in range(5):
        s = random_state(model, rng, spread=0.2, speed=0.3)
        d = ctrl.step(s, References(height=(0.33, 0.0, 0.0)), auto_roll=False)
        F = d.F_C
        assert F[1] <= 1e-8 and F[3] <= 1e-8
        assert abs(F[0]) <= -0.8 * F[1] + 1e-8
        assert abs(F[2]) <= -0.8 * F[3] + 1e-8


def test_zmp(model, standing):
    frame = frame_from_kinematics(KinematicsCache(model, standing))
    assert zmp_along_los(frame, [0, -10, 0, -10]) == pytest.approx(0.0, abs=1e-12)
    yl = frame.to_frame(frame.contacts[0])[1]
    assert zmp_along_los(frame, [0, -10, 0, 0]) == pytest.approx(yl)
    assert yl > 0  # left wheel on the positive lateral side
    with pytest.raises(NoContactForce):
        zmp_along_los(frame, [0, 0, 0, 1.0])


def test_roll_reference():
    assert roll_reference_for_zmp(1.0, 1.0, 1.0) == pytest.approx(-math.atan(1 / 9.81))
    assert abs(roll_reference_for_zmp(1.0, 1.0, 1.0)) == pytest.approx(0.1016, abs=1e-4)
    assert roll_reference_for_zmp(1.0, 1.0, 0.0) == 0.0
    assert roll_reference_for_zmp(-1.0, 1.0, 1.0) == -roll_reference_for_zmp(1.0, 1.0, 1.0)


def test_roll_filter_time_constant():
    f = RollReferenceFilter(tau=0.2, Ts=0.0025)
    for _ in range(80):  # one time constant
        value, _ = f.update(1.0)
    assert value == pytest.approx(1 - math.exp(-1), rel=1e-9)


def test_pd_acceleration():
    assert pd_acceleration((1.0, 0.5, 0.2), 0.0, 0.0, 10.0, 2.0) == pytest.approx(11.2)
    with pytest.raises(ValidationError):
        pd_acceleration((0, 0, 0), 0, 0, -1.0, 1.0)


def test_height_target():
    r = References(height=(0.35, 0, 0))
    assert height_target(r, 0.0, 0.0) == 0.35
    assert height_target(r, 0.1, 0.05) == pytest.approx(0.35 * math.cos(0.1) * math.cos(0.05))
    r = References(height=(0.35, 0, 0), length=0.3)
    assert height_target(r, 0.0, 0.0) == 0.3


def test_reference_validation(model):
    with pytest.raises(ValidationError):
        References(roll=(1.0, 0, 0)).validate()
    with pytest.raises(ValidationError):
        References(height=(0.9, 0, 0)).validate(model)
    with pytest.raises(ValidationError):
        References(v=float("nan")).validate()


@pytest.mark.parametrize("doc", [{"bogus": 1}, {"Ts": 0}, {"height_reference": "up"}, {"aggressiveness": 2}])
def test_config_validation(doc):
    with pytest.raises(ValidationError):
        ControllerConfig.from_dict(doc)


def test_stack_shapes(model, standing):
    terms = system_terms(model, standing)
    st = build_task_stack(model, terms, hold_refs(model, standing), 0.0)
    assert st.n == 26
    assert st.levels[0].A.shape == (22, 26)
    assert [lv.name for lv in st.levels] == ["dynamics", "height", "roll", "pitch", "yaw", "torque"]
    assert st.ineq.C.shape == (8 + 2 + 4, 26)


def test_hold_then_zero_after_repeated_failures(model, standing, monkeypatch):
    ctrl = Controller(model)
    good = ctrl.step(standing, References(height=(0.33, 0, 0)), auto_roll=False)
    assert np.abs(good.tau).max() > 0.1

    def boom(*_a, **_k):
        raise Infeasible("forced", level=1)

    monkeypatch.setattr(ctrl.solver, "solve", boom)
    outs = [ctrl.step(standing, References(height=(0.33, 0, 0)), auto_roll=False) for _ in range(11)]
    for d in outs[:10]:
        assert d.hold and not d.failed
        assert np.array_equal(d.tau, good.tau)
    assert outs[10].failed
    assert np.array_equal(outs[10].tau, np.zeros(4))
