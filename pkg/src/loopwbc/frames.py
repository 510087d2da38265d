"""Local control frame N attached to the line of support."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import contour_parameter, contour_point
from .kinematics import KinematicsCache
from .so3 import cross
from .terrain import Terrain


@dataclass
class ControlFrame:
    origin: np.ndarray  # G, midpoint of the line of support
    R_IN: np.ndarray  # columns: heading, along the line of support, up
    contacts: np.ndarray  # (2, 3) contact points, left then right

    @property
    def x(self):
        return self.R_IN[:, 0]

    @property
    def y(self):
        return self.R_IN[:, 1]

    @property
    def z(self):
        return self.R_IN[:, 2]

    def to_frame(self, p) -> np.ndarray:
        """Coordinates of world point ``p`` in N."""
        return self.R_IN.T @ (np.asarray(p) - self.origin)


def frame_from_kinematics(kin: KinematicsCache, terrain: Terrain | None = None, t: float = 0.0) -> ControlFrame:
    model = kin.model
    terrain = terrain or Terrain.flat()
    contacts, normals = [], []
    for w in model.wheels:
        hub = kin.p[w.body]
        n = terrain.query(hub[:2], t).normal
        sigma = contour_parameter(kin.R[w.body].T, n)
        contacts.append(hub + kin.R[w.body] @ contour_point(w.radius, sigma))
        normals.append(n)
    c = np.array(contacts)
    G = 0.5 * (c[0] + c[1])
    y = c[0] - c[1]
    y /= np.linalg.norm(y)
    n = normals[0] + normals[1]
    n /= np.linalg.norm(n)
    h = kin.R[0][:, 0].copy()
    h -= (h @ n) * n
    h -= (h @ y) * y
    x = h / np.linalg.norm(h)
    z = cross(x, y)
    return ControlFrame(G, np.column_stack([x, y, z]), c)
