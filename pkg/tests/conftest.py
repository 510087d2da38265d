import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from loopwbc.assembly import standing_state  # noqa: E402
from loopwbc.model import load_model  # noqa: E402

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "loopwbc" / "data" / "scenarios"


@pytest.fixture(scope="session")
def model():
    return load_model("ascento_like.json")


@pytest.fixture(scope="session")
def standing(model):
    return standing_state(model, hip=-0.45)


def random_state(model, rng, spread=0.3, speed=1.0):
    """Closed, grounded, velocity-consistent state near the nominal pose."""
    from loopwbc.assembly import close_loops, place_on_ground, project_velocity
    from loopwbc.so3 import rot_x, rot_y, rot_z

    s = standing_state(model, hip=-0.45 + rng.uniform(-spread, spread))
    s.R = rot_z(rng.uniform(-np.pi, np.pi)) @ rot_y(rng.uniform(-0.3, 0.3)) @ rot_x(rng.uniform(-0.05, 0.05))
    s.r[:2] = rng.uniform(-1, 1, 2)
    hips = [j for j in model.actuators if model.joints[j].name.startswith("hip")]
    s.phi[hips] += rng.uniform(-0.1, 0.1, len(hips))
    s = close_loops(model, s)
    s = place_on_ground(model, s, adjust_roll=True)
    s.u = rng.normal(0, speed, model.nu)
    return project_velocity(model, s)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one pass/fail line for an acceptance criterion."""

    def _report(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
