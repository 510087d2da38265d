import copy
import json

import numpy as np
import pytest

from loopwbc.errors import ParseError, ValidationError
from loopwbc.model import DATA_DIR, GeneralizedState, load_model, model_from_dict, validate_state, zero_state


@pytest.fixture(scope="module")
def doc():
    return json.loads((DATA_DIR / "ascento_like.json").read_text())


def test_canonical_model(model):
    assert model.nj == 8
    assert model.nu == 14
    assert model.ntau == 4
    assert len(model.loops) == 2
    assert model.total_mass == pytest.approx(10.0)
    assert all(w.radius == 0.1 for w in model.wheels)
    assert all(s.stiffness == 20.0 for s in model.springs)
    assert model.mu_static == 0.8
    assert model.S.shape == (4, 14)
    assert np.array_equal(model.S.sum(axis=0).nonzero()[0], sorted(model.joint_coord(j) for j in model.actuators))


def test_bodies_follow_parents(model):
    for j in model.joints:
        assert j.parent < j.child


def _broken(doc, edit):
    d = copy.deepcopy(doc)
    edit(d)
    return d


@pytest.mark.parametrize("edit, msg", [
    (lambda d: d.pop("joints"), "missing top-level keys"),
    (lambda d: d["bodies"][1].update(mass=-1.0), "mass"),
    (lambda d: d["joints"][0].update(axis=[0, 0, 0]), "zero vector"),
    (lambda d: d["joints"][0].update(parent="nowhere"), "unknown parent"),
    (lambda d: d["joints"].append(dict(d["joints"][1], name="dup")), "more than one parent"),
    (lambda d: d["loops"].pop(), "exactly 2 loops"),
    (lambda d: d["wheels"].pop(), "wheels"),
    (lambda d: d["wheels"][0].update(radius=0), "radius"),
    (lambda d: d["actuators"].append("hip_l"), "actuated twice"),
    (lambda d: d["saturation"].pop("hip_l"), "saturation"),
    (lambda d: d["bodies"][1].update(inertia=[[1, 0, 0], [0, 1, 0], [0, 0, -1]]), "inertia"),
])
def test_invalid_models(doc, edit, msg):
    with pytest.raises(ValidationError, match=msg):
        model_from_dict(_broken(doc, edit))


def test_parse_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_model(p)
    with pytest.raises(ParseError):
        load_model(tmp_path / "missing.json")


def test_state_validation(model):
    s = zero_state(model)
    validate_state(model, s)
    bad = s.copy()
    bad.phi = np.zeros(3)
    with pytest.raises(ValidationError):
        validate_state(model, bad)
    bad = s.copy()
    bad.R = 2 * np.eye(3)
    with pytest.raises(ValidationError):
        validate_state(model, bad)
    bad = s.copy()
    bad.u[0] = np.nan
    with pytest.raises(ValidationError):
        validate_state(model, bad)


def test_state_round_trip(standing):
    again = GeneralizedState.from_dict(json.loads(json.dumps(standing.to_dict())))
    assert np.array_equal(again.phi, standing.phi)
    assert np.array_equal(again.R, standing.R)
    assert np.array_equal(again.u, standing.u)
