"""Piecewise-planar terrain. Patches may translate vertically over time (moving plank)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfTerrain, ValidationError


@dataclass(frozen=True)
class TerrainSample:
    height: float
    normal: np.ndarray
    velocity: np.ndarray  # ground velocity at the query point
    acceleration: np.ndarray


@dataclass(frozen=True)
class TriangleMotion:
    """Vertical triangle wave 0 -> amplitude -> 0, moving-average smoothed over ``blend`` seconds.

    The smoothing keeps the ground acceleration finite; the wave is delayed by
    half a blend window so that it starts from rest at ``start``.
    """

    amplitude: float
    frequency: float
    blend: float = 0.2
    start: float = 0.0

    def _tri(self, s):
        if s <= 0.0:
            return 0.0, 0.0
        T = 1.0 / self.frequency
        A = self.amplitude
        ph = s % T
        if ph < 0.5 * T:
            return A * 2.0 * ph / T, 2.0 * A / T
        return A * (2.0 - 2.0 * ph / T), -2.0 * A / T

    def _integral(self, s):
        if s <= 0.0:
            return 0.0
        T = 1.0 / self.frequency
        A = self.amplitude
        n, ph = divmod(s, T)
        if ph < 0.5 * T:
            g = A * ph * ph / T
        else:
            g = A * (2.0 * ph - ph * ph / T - 0.5 * T)
        return n * A * T / 2.0 + g

    def evaluate(self, t: float) -> tuple[float, float, float]:
        """Offset, rate and acceleration at time ``t``."""
        b = self.blend
        c = t - self.start - 0.5 * b
        lo, hi = c - 0.5 * b, c + 0.5 * b
        if b <= 0.0:
            h, v = self._tri(c)
            return h, v, 0.0
        h = (self._integral(hi) - self._integral(lo)) / b
        v = (self._tri(hi)[0] - self._tri(lo)[0]) / b
        a = (self._tri(hi)[1] - self._tri(lo)[1]) / b
        return h, v, a


@dataclass(frozen=True)
class Patch:
    region: tuple[float, float, float, float]  # xmin, xmax, ymin, ymax
    height: float = 0.0
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    origin: tuple[float, float] = (0.0, 0.0)
    motion: TriangleMotion | None = None

    def contains(self, xy) -> bool:
        x0, x1, y0, y1 = self.region
        return x0 <= xy[0] <= x1 and y0 <= xy[1] <= y1

    def sample(self, xy, t: float) -> TerrainSample:
        n = self.normal
        dz = -(n[0] * (xy[0] - self.origin[0]) + n[1] * (xy[1] - self.origin[1])) / n[2]
        h, v, a = self.motion.evaluate(t) if self.motion else (0.0, 0.0, 0.0)
        return TerrainSample(self.height + dz + h, n, np.array([0.0, 0.0, v]), np.array([0.0, 0.0, a]))


@dataclass(frozen=True)
class Terrain:
    patches: tuple[Patch, ...] = (Patch((-np.inf, np.inf, -np.inf, np.inf)),)

    def query(self, xy, t: float = 0.0) -> TerrainSample:
        return terrain_query(self, xy, t)

    @classmethod
    def flat(cls) -> "Terrain":
        return cls()

    @classmethod
    def from_dict(cls, doc) -> "Terrain":
        if not doc:
            return cls()
        patches = []
        for i, p in enumerate(doc.get("patches", [])):
            region = tuple(float(v) if v is not None else (-np.inf if k % 2 == 0 else np.inf)
                           for k, v in enumerate(p.get("region", [None] * 4)))
            if len(region) != 4:
                raise ValidationError(f"terrain.patches[{i}].region: expected [xmin, xmax, ymin, ymax]")
            n = np.asarray(p.get("normal", [0.0, 0.0, 1.0]), dtype=float)
            if n.shape != (3,) or not abs(np.linalg.norm(n) - 1.0) < 1e-9 or n[2] <= 0.0:
                raise ValidationError(f"terrain.patches[{i}].normal: must be a unit vector with positive z")
            motion = None
            if "motion" in p:
                md = p["motion"]
                if md.get("type", "triangle") != "triangle":
                    raise ValidationError(f"terrain.patches[{i}].motion.type: only 'triangle' is supported")
                motion = TriangleMotion(float(md["amplitude"]), float(md["frequency"]),
                                        float(md.get("blend", 0.2)), float(md.get("start", 0.0)))
            patches.append(Patch(region, float(p.get("height", 0.0)), n, tuple(p.get("origin", (0.0, 0.0))), motion))
        if not patches:
            return cls()
        return cls(tuple(patches))


def terrain_query(terrain: Terrain, xy, t: float = 0.0) -> TerrainSample:
    """Height and normal of the lowest-index patch containing ``xy``."""
    for patch in terrain.patches:
        if patch.contains(xy):
            return patch.sample(xy, t)
    raise OutOfTerrain(f"no terrain patch covers ({xy[0]:.3f}, {xy[1]:.3f})")
