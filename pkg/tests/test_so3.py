import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm
from scipy.spatial.transform import Rotation

from loopwbc.so3 import cross, exp_map, is_rotation, orthonormalize, rot_axis, skew

vec = st.lists(st.floats(-5, 5), min_size=3, max_size=3).map(np.array)


@settings(max_examples=200, deadline=None)
@given(vec)
def test_exp_map_matches_matrix_exponential(w):
    assert np.allclose(exp_map(w), expm(skew(w)), atol=1e-12)
    assert is_rotation(exp_map(w))


def test_exp_map_small_angle():
    w = np.array([1e-12, -2e-12, 3e-12])
    assert np.allclose(exp_map(w), np.eye(3) + skew(w), atol=1e-20)


@settings(max_examples=100, deadline=None)
@given(vec, vec)
def test_cross_matches_numpy(a, b):
    assert np.allclose(cross(a, b), np.cross(a, b), atol=1e-12)
    A = np.stack([a, b, a + b])
    assert np.allclose(cross(A, A[::-1]), np.cross(A, A[::-1]), atol=1e-12)
    assert np.allclose(skew(a) @ b, np.cross(a, b), atol=1e-12)


def test_orthonormalize_repairs_drift():
    R = Rotation.from_rotvec([0.3, -0.2, 1.0]).as_matrix()
    bad = R + 1e-6 * np.random.default_rng(0).normal(size=(3, 3))
    fixed = orthonormalize(bad)
    assert is_rotation(fixed, tol=1e-13)
    assert np.abs(fixed - R).max() < 1e-5


@pytest.mark.parametrize("axis", [[1, 0, 0], [0, 1, 0], [0, 0, 1]])
def test_rot_axis(axis):
    R = rot_axis(np.array(axis, float), 0.7)
    assert np.allclose(R, Rotation.from_rotvec(0.7 * np.array(axis)).as_matrix())
