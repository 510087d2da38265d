"""Rotation-matrix and vector primitives."""

import numpy as np

from .errors import DegenerateDirection

ATAN2_EPS = 1e-12


def skew(v):
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_map(w):
    """Rodrigues formula for the rotation ``exp(skew(w))``.

    ``w`` is the rotation vector (angular velocity already scaled by the
    time step). Small angles fall back on the second-order Taylor terms.
    """
    w = np.asarray(w, dtype=float)
    th2 = float(w @ w)
    K = skew(w)
    if th2 < 1e-16:
        # series for sin(t)/t and (1-cos t)/t^2
        a = 1.0 - th2 / 6.0
        b = 0.5 - th2 / 24.0
    else:
        th = np.sqrt(th2)
        a = np.sin(th) / th
        b = (1.0 - np.cos(th)) / th2
    return np.eye(3) + a * K + b * (K @ K)


def rot_axis(axis, angle):
    """Rotation about a unit ``axis`` by ``angle`` radians."""
    return exp_map(np.asarray(axis, dtype=float) * angle)


def orthonormalize(R):
    """Nearest rotation matrix in the Frobenius sense (polar projection)."""
    U, _, Vt = np.linalg.svd(R)
    Rn = U @ Vt
    if np.linalg.det(Rn) < 0.0:
        U[:, -1] *= -1.0
        Rn = U @ Vt
    return Rn


def is_rotation(R, tol=1e-10):
    R = np.asarray(R)
    return (
        R.shape == (3, 3)
        and np.all(np.isfinite(R))
        and np.allclose(R.T @ R, np.eye(3), atol=tol, rtol=0.0)
        and abs(np.linalg.det(R) - 1.0) < tol
    )


def atan2_gradient(a, b):
    """Partial derivatives of ``arctan2(a, b)`` with respect to ``a`` and ``b``."""
    r2 = a * a + b * b
    if r2 <= ATAN2_EPS:
        raise DegenerateDirection(f"arctan2 gradient undefined for |(a, b)|^2 = {r2:.3e}")
    return b / r2, -a / r2


def rot_x(angle):
    return rot_axis((1.0, 0.0, 0.0), angle)


def rot_y(angle):
    return rot_axis((0.0, 1.0, 0.0), angle)


def rot_z(angle):
    return rot_axis((0.0, 0.0, 1.0), angle)


def cross(a, b) -> np.ndarray:
    """Broadcasting 3-vector cross product along the last axis (np.cross without the overhead)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim == 1 and b.ndim == 1:
        x, y, z = a.tolist()
        u, v, w = b.tolist()
        return np.array([y * w - z * v, z * u - x * w, x * v - y * u])
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)
