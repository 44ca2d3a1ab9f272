import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgpcal.pose import (IDENTITY, Pose2D, chain_arr, compose_all, normalize_angle, ominus,
                         ominus_arr, oplus, oplus_arr, relative_pose, relative_pose_arr)
from oracles import naive_ominus, naive_oplus

coord = st.floats(-100, 100, allow_nan=False)
angle = st.floats(-10, 10, allow_nan=False)
poses = st.builds(Pose2D, coord, coord, angle)


def close(a, b, tol=1e-12):
    d = np.asarray(tuple(a)) - np.asarray(tuple(b))
    d[2] = normalize_angle(d[2])
    return np.max(np.abs(d)) <= tol


@pytest.mark.parametrize("a, b, expected", [
    ((0, 0, 0), (1, 2, 0.3), (1, 2, 0.3)),
    ((1, 0, math.pi / 2), (1, 0, 0), (1, 1, math.pi / 2)),
    ((1, 2, math.pi), (1, 0, math.pi), (0, 2, 0)),
])
def test_oplus_examples(a, b, expected):
    assert close(oplus(Pose2D(*a), Pose2D(*b)), expected)


def test_ominus_examples():
    assert close(ominus(Pose2D(1, 0, 0)), (-1, 0, 0))
    assert close(ominus(Pose2D(0, 1, math.pi / 2)), (-1, 0, -math.pi / 2))


@pytest.mark.parametrize("a, b, expected", [
    ((0, 0, 0), (1, 2, 0.3), (1, 2, 0.3)),
    ((1, 0, math.pi / 2), (1, 1, math.pi / 2), (1, 0, 0)),
])
def test_relative_pose_examples(a, b, expected):
    assert close(relative_pose(Pose2D(*a), Pose2D(*b)), expected)


def test_angle_range_is_half_open():
    assert Pose2D(0, 0, -math.pi).theta == pytest.approx(math.pi)
    assert Pose2D(0, 0, math.pi).theta == pytest.approx(math.pi)
    assert Pose2D(0, 0, 3 * math.pi).theta == pytest.approx(math.pi)
    assert Pose2D(0, 0, 2 * math.pi).theta == 0.0


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        Pose2D(float("nan"), 0, 0)


@given(angle)
def test_normalize_idempotent(t):
    n = normalize_angle(t)
    assert -math.pi < n <= math.pi
    assert normalize_angle(n) == n


@given(poses)
def test_self_relative_is_identity(p):
    assert close(relative_pose(p, p), IDENTITY, 1e-12)


@given(poses)
def test_identity_laws(a):
    assert close(oplus(IDENTITY, a), a)
    assert close(oplus(a, IDENTITY), a)


@given(poses)
def test_inverse_laws(a):
    assert close(oplus(ominus(a), a), IDENTITY, 1e-12 * max(1.0, abs(a.x) + abs(a.y)))
    assert close(oplus(a, ominus(a)), IDENTITY, 1e-12 * max(1.0, abs(a.x) + abs(a.y)))
    assert close(ominus(ominus(a)), a, 1e-12 * max(1.0, abs(a.x) + abs(a.y)))


@settings(max_examples=200)
@given(poses, poses, poses)
def test_associativity(a, b, c):
    scale = max(1.0, *(abs(v) for p in (a, b, c) for v in (p.x, p.y)))
    assert close(oplus(oplus(a, b), c), oplus(a, oplus(b, c)), 4e-15 * scale * 10)


@given(poses, poses)
def test_matches_direct_formula(a, b):
    assert close(oplus(a, b), naive_oplus(tuple(a), tuple(b)), 1e-9)
    assert close(ominus(a), naive_ominus(tuple(a)), 1e-9)


def test_operator_sugar():
    a, b = Pose2D(1, 2, 0.5), Pose2D(-0.3, 0.7, 2.0)
    assert a + b == oplus(a, b)
    assert -a == ominus(a)
    assert compose_all([a, b]) == oplus(oplus(IDENTITY, a), b)


def test_vectorized_agrees_with_scalar():
    rng = np.random.default_rng(3)
    A = rng.uniform(-5, 5, (50, 3))
    B = rng.uniform(-5, 5, (50, 3))
    C = oplus_arr(A, B)
    R = relative_pose_arr(A, B)
    I = ominus_arr(A)
    for k in range(50):
        a, b = Pose2D(*A[k]), Pose2D(*B[k])
        assert close(C[k], oplus(a, b))
        assert close(R[k], relative_pose(a, b))
        assert close(I[k], ominus(a))


def test_chain_then_relative_round_trip():
    rng = np.random.default_rng(4)
    steps = rng.uniform(-0.5, 0.5, (40, 3))
    traj = chain_arr(np.array([1.0, -2.0, 0.4]), steps)
    assert traj.shape == (41, 3)
    back = relative_pose_arr(traj[:-1], traj[1:])
    assert np.max(np.abs(back - steps)) < 1e-12
