"""Robot description: kinematic tree with opened loops, loaded from JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .so3 import is_rotation

GRAVITY = np.array([0.0, 0.0, -9.81])

REQUIRED_KEYS = ("bodies", "joints", "loops", "wheels", "springs", "actuators", "friction", "saturation")


@dataclass(frozen=True)
class Body:
    name: str
    mass: float
    com: np.ndarray  # body frame, m
    inertia: np.ndarray  # about the CoM, body frame, kg m^2


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int  # body index
    child: int  # body index
    origin: np.ndarray  # joint position in the parent frame
    axis: np.ndarray  # unit axis, parent (= child) frame


@dataclass(frozen=True)
class Loop:
    """Cut hinge of a kinematic loop: point P on one body must meet point Q on another."""

    name: str
    p_body: int
    p_point: np.ndarray
    q_body: int
    q_point: np.ndarray


@dataclass(frozen=True)
class Wheel:
    name: str
    body: int
    radius: float


@dataclass(frozen=True)
class Spring:
    joint: int
    stiffness: float
    rest_angle: float


@dataclass(frozen=True)
class RobotModel:
    name: str
    bodies: tuple[Body, ...]
    joints: tuple[Joint, ...]
    loops: tuple[Loop, ...]
    wheels: tuple[Wheel, ...]
    springs: tuple[Spring, ...]
    actuators: tuple[int, ...]  # joint index per actuator
    mu_sliding: float
    mu_static: float
    saturation: np.ndarray
    floating_base: bool = True
    base_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    base_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    height_range: tuple[float, float] = (0.0, np.inf)
    # derived in __post_init__
    support: np.ndarray = field(init=False, repr=False)
    S: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        nb = len(self.bodies)
        support = np.zeros((nb, self.nj), dtype=bool)
        for j, joint in enumerate(self.joints):
            support[joint.child] = support[joint.parent]
            support[joint.child, j] = True
        object.__setattr__(self, "support", support)
        S = np.zeros((self.ntau, self.nu))
        for i, j in enumerate(self.actuators):
            S[i, self.joint_coord(j)] = 1.0
        object.__setattr__(self, "S", S)

    @property
    def nj(self) -> int:
        return len(self.joints)

    @property
    def nbase(self) -> int:
        return 6 if self.floating_base else 0

    @property
    def nu(self) -> int:
        return self.nbase + self.nj

    @property
    def ntau(self) -> int:
        return len(self.actuators)

    def joint_coord(self, j: int) -> int:
        """Index of joint ``j`` inside the generalized velocity vector."""
        return self.nbase + j

    def body_index(self, name: str) -> int:
        for i, b in enumerate(self.bodies):
            if b.name == name:
                return i
        raise KeyError(name)

    def joint_index(self, name: str) -> int:
        for i, j in enumerate(self.joints):
            if j.name == name:
                return i
        raise KeyError(name)

    @property
    def wheel_bodies(self) -> list[int]:
        return [w.body for w in self.wheels]

    @property
    def total_mass(self) -> float:
        return sum(b.mass for b in self.bodies)

    def replace(self, **changes) -> "RobotModel":
        """Copy with some constructor fields replaced."""
        kw = {
            k: getattr(self, k)
            for k in self.__dataclass_fields__
            if self.__dataclass_fields__[k].init
        }
        kw.update(changes)
        return RobotModel(**kw)


@dataclass
class GeneralizedState:
    """Generalized coordinates q = (r_IB, R_IB, phi) and velocities u = (v_IB, w_IB, dphi).

    Base velocities are expressed in the inertial frame. For a pinned base
    ``u`` holds only the joint rates.
    """

    r: np.ndarray
    R: np.ndarray
    phi: np.ndarray
    u: np.ndarray

    def copy(self) -> "GeneralizedState":
        return GeneralizedState(self.r.copy(), self.R.copy(), self.phi.copy(), self.u.copy())

    def to_dict(self) -> dict:
        return {
            "r": self.r.tolist(),
            "R": self.R.tolist(),
            "phi": self.phi.tolist(),
            "u": self.u.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneralizedState":
        return cls(
            np.asarray(d["r"], dtype=float),
            np.asarray(d["R"], dtype=float),
            np.asarray(d["phi"], dtype=float),
            np.asarray(d["u"], dtype=float),
        )


def zero_state(model: RobotModel) -> GeneralizedState:
    return GeneralizedState(
        model.base_position.copy(),
        model.base_rotation.copy(),
        np.zeros(model.nj),
        np.zeros(model.nu),
    )


def validate_state(model: RobotModel, state: GeneralizedState) -> None:
    if state.phi.shape != (model.nj,):
        raise ValidationError(f"state.phi: expected {model.nj} joint angles, got {state.phi.shape}")
    if state.u.shape != (model.nu,):
        raise ValidationError(f"state.u: expected {model.nu} velocities, got {state.u.shape}")
    if not is_rotation(state.R, tol=1e-8):
        raise ValidationError("state.R: not a rotation matrix")
    for name in ("r", "phi", "u"):
        if not np.all(np.isfinite(getattr(state, name))):
            raise ValidationError(f"state.{name}: non-finite entries")


# ---------------------------------------------------------------- loading


def _vec(value, n, where):
    try:
        arr = np.asarray(value, dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: not numeric") from exc
    if arr.shape != (n,) or not np.all(np.isfinite(arr)):
        raise ValidationError(f"{where}: expected {n} finite numbers")
    return arr


def _inertia(value, where):
    arr = np.asarray(value, dtype=float)
    if arr.shape == (3,):
        arr = np.diag(arr)
    if arr.shape != (3, 3) or not np.all(np.isfinite(arr)):
        raise ValidationError(f"{where}: expected a 3x3 tensor or 3 principal moments")
    if not np.allclose(arr, arr.T, atol=1e-12):
        raise ValidationError(f"{where}: inertia tensor not symmetric")
    if np.linalg.eigvalsh(arr).min() <= 0.0:
        raise ValidationError(f"{where}: inertia tensor not positive definite")
    return arr


def model_from_dict(doc: dict) -> RobotModel:
    """Build and validate a :class:`RobotModel` from a parsed model document."""
    if not isinstance(doc, dict):
        raise ParseError("model document must be a JSON object")
    missing = [k for k in REQUIRED_KEYS if k not in doc]
    if missing:
        raise ValidationError(f"missing top-level keys: {', '.join(missing)}")

    floating = bool(doc.get("floating_base", True))
    base_name = doc.get("base", doc["bodies"][0]["name"] if doc["bodies"] else None)

    raw_bodies = {}
    for i, b in enumerate(doc["bodies"]):
        name = b.get("name")
        if not isinstance(name, str) or name in raw_bodies:
            raise ValidationError(f"bodies[{i}].name: missing or duplicate")
        mass = float(b.get("mass", float("nan")))
        if not mass > 0.0:
            raise ValidationError(f"bodies[{name}].mass: must be > 0, got {mass}")
        raw_bodies[name] = Body(
            name,
            mass,
            _vec(b.get("com", [0, 0, 0]), 3, f"bodies[{name}].com"),
            _inertia(b.get("inertia"), f"bodies[{name}].inertia"),
        )
    if base_name not in raw_bodies:
        raise ValidationError(f"base: unknown body {base_name!r}")

    # Reorder bodies so that the base comes first and every joint's child follows its parent.
    order = [base_name]
    joints_raw = doc["joints"]
    children = set()
    for i, j in enumerate(joints_raw):
        if j.get("type", "revolute") != "revolute":
            raise ValidationError(f"joints[{i}].type: only revolute joints are supported")
        for key in ("name", "parent", "child"):
            if key not in j:
                raise ValidationError(f"joints[{i}].{key}: missing")
        if j["parent"] not in raw_bodies or j["child"] not in raw_bodies:
            raise ValidationError(f"joints[{j['name']}]: unknown parent or child body")
        if j["child"] in children or j["child"] == base_name:
            raise ValidationError(f"joints[{j['name']}].child: body has more than one parent (tree must be acyclic)")
        children.add(j["child"])
        if j["parent"] not in order:
            raise ValidationError(
                f"joints[{j['name']}].parent: {j['parent']!r} must be the base or the child of an earlier joint"
            )
        order.append(j["child"])
    if len(order) != len(raw_bodies):
        unattached = sorted(set(raw_bodies) - set(order))
        raise ValidationError(f"bodies not connected to the tree: {', '.join(unattached)}")
    bidx = {name: i for i, name in enumerate(order)}
    bodies = tuple(raw_bodies[n] for n in order)

    joints = []
    for j in joints_raw:
        axis = _vec(j.get("axis"), 3, f"joints[{j['name']}].axis")
        norm = np.linalg.norm(axis)
        if norm < 1e-12:
            raise ValidationError(f"joints[{j['name']}].axis: zero vector")
        joints.append(
            Joint(j["name"], bidx[j["parent"]], bidx[j["child"]],
                  _vec(j.get("origin", [0, 0, 0]), 3, f"joints[{j['name']}].origin"), axis / norm)
        )
    jidx = {j.name: i for i, j in enumerate(joints)}

    loops = []
    if len(doc["loops"]) != 2:
        raise ValidationError(f"loops: exactly 2 loops required, got {len(doc['loops'])}")
    for i, lp in enumerate(doc["loops"]):
        for key in ("p_body", "q_body"):
            if lp.get(key) not in bidx:
                raise ValidationError(f"loops[{i}].{key}: unknown body {lp.get(key)!r}")
        loops.append(
            Loop(lp.get("name", f"loop{i}"), bidx[lp["p_body"]], _vec(lp.get("p_point"), 3, f"loops[{i}].p_point"),
                 bidx[lp["q_body"]], _vec(lp.get("q_point"), 3, f"loops[{i}].q_point"))
        )

    wheels = []
    for i, w in enumerate(doc["wheels"]):
        if w.get("body") not in bidx:
            raise ValidationError(f"wheels[{i}].body: unknown body {w.get('body')!r}")
        radius = float(w.get("radius", float("nan")))
        if not radius > 0.0:
            raise ValidationError(f"wheels[{i}].radius: must be > 0, got {radius}")
        wheels.append(Wheel(w.get("name", w["body"]), bidx[w["body"]], radius))
    if len(wheels) not in (0, 2):
        raise ValidationError(f"wheels: expected 0 or 2 wheels, got {len(wheels)}")
    if floating and len(wheels) != 2:
        raise ValidationError("wheels: a floating-base model needs exactly 2 wheels")

    springs = []
    for i, s in enumerate(doc["springs"]):
        if s.get("joint") not in jidx:
            raise ValidationError(f"springs[{i}].joint: unknown joint {s.get('joint')!r}")
        k = float(s.get("stiffness", float("nan")))
        if not k >= 0.0:
            raise ValidationError(f"springs[{i}].stiffness: must be >= 0")
        springs.append(Spring(jidx[s["joint"]], k, float(s.get("rest_angle", 0.0))))

    actuators = []
    for i, name in enumerate(doc["actuators"]):
        if name not in jidx:
            raise ValidationError(f"actuators[{i}]: unknown joint {name!r}")
        if jidx[name] in actuators:
            raise ValidationError(f"actuators[{i}]: joint {name!r} actuated twice")
        actuators.append(jidx[name])

    fric = doc["friction"]
    mu_s = float(fric.get("sliding", float("nan")))
    mu_h = float(fric.get("static", float("nan")))
    if not (mu_s >= 0.0 and mu_h >= 0.0):
        raise ValidationError("friction: 'sliding' and 'static' must be >= 0")

    sat_doc = doc["saturation"]
    if isinstance(sat_doc, dict):
        try:
            sat = [float(sat_doc[joints[j].name]) for j in actuators]
        except KeyError as exc:
            raise ValidationError(f"saturation: no bound for actuator {exc.args[0]!r}") from exc
    else:
        sat = list(sat_doc)
    saturation = _vec(sat, len(actuators), "saturation")
    if np.any(saturation <= 0.0):
        raise ValidationError("saturation: bounds must be > 0")

    base_pose = doc.get("base_pose", {})
    base_R = np.asarray(base_pose.get("rotation", np.eye(3)), dtype=float)
    if not is_rotation(base_R):
        raise ValidationError("base_pose.rotation: not a rotation matrix")
    hr = doc.get("workspace", {}).get("height", [0.0, float("inf")])

    return RobotModel(
        name=str(doc.get("name", "model")),
        bodies=bodies,
        joints=tuple(joints),
        loops=tuple(loops),
        wheels=tuple(wheels),
        springs=tuple(springs),
        actuators=tuple(actuators),
        mu_sliding=mu_s,
        mu_static=mu_h,
        saturation=saturation,
        floating_base=floating,
        base_position=_vec(base_pose.get("position", [0, 0, 0]), 3, "base_pose.position"),
        base_rotation=base_R,
        height_range=(float(hr[0]), float(hr[1])),
    )


def load_model(path) -> RobotModel:
    """Load a model file. Relative names are also looked up in the shipped data directory."""
    p = resolve_data_path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{p}: {exc}") from exc
    except OSError as exc:
        raise ParseError(f"{p}: {exc}") from exc
    return model_from_dict(doc)


DATA_DIR = Path(__file__).resolve().parent / "data"


def resolve_data_path(path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    for candidate in (DATA_DIR / p, DATA_DIR / "scenarios" / p):
        if candidate.exists():
            return candidate
    return p
