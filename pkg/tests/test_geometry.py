"""SE(3) algebra: worked examples and randomized properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dexgen.geometry import (
    IDENTITY,
    Pose,
    apply,
    axis_angle,
    compose,
    from_rotvec,
    from_yaw,
    interpolate,
    invert,
    quat_distance,
    relative_transform,
    rotation_angle,
    slerp,
    to_rotvec,
    translation,
)

finite = st.floats(-5.0, 5.0, allow_nan=False)
unit = st.floats(-1.0, 1.0, allow_nan=False)


@st.composite
def poses(draw):
    q = [draw(unit) for _ in range(4)]
    if sum(c * c for c in q) < 1e-3:
        q = [1.0, 0.0, 0.0, 0.0]
    return Pose((draw(finite), draw(finite), draw(finite)), tuple(q))


def close(a: Pose, b: Pose, tol=1e-9) -> bool:
    return math.dist(a.pos, b.pos) < tol and quat_distance(a.quat, b.quat) < tol


def test_compose_identity():
    assert compose(IDENTITY, IDENTITY) == IDENTITY


def test_compose_translations_add():
    t = compose(translation(1, 0, 0), translation(0, 2, 0))
    assert t.pos == (1.0, 2.0, 0.0)
    assert t.quat == (1.0, 0.0, 0.0, 0.0)


def test_invert_examples():
    assert invert(IDENTITY) == IDENTITY
    assert invert(translation(1, 2, 3)) == translation(-1, -2, -3)


def test_relative_transform_examples():
    p = Pose((0.3, -0.2, 0.1), from_yaw(0.4))
    assert close(relative_transform(p, p), IDENTITY)
    assert relative_transform(IDENTITY, translation(1, 0, 0)) == translation(1, 0, 0)


def test_apply_half_turn_about_z():
    out = apply(Pose(quat=from_yaw(math.pi)), translation(1, 0, 0))
    assert np.allclose(out.pos, (-1.0, 0.0, 0.0), atol=1e-15)


def test_interpolate_single_step_is_end():
    end = Pose((1, 2, 3), from_yaw(1.0))
    assert interpolate(IDENTITY, end, 1) == [end]


def test_interpolate_midpoint_of_quarter_turn():
    mid = interpolate(IDENTITY, Pose(quat=from_yaw(math.pi / 2)), 2)[0]
    assert quat_distance(mid.quat, from_yaw(math.pi / 4)) < 1e-12


def test_interpolate_rejects_zero_steps():
    with pytest.raises(ValueError):
        interpolate(IDENTITY, IDENTITY, 0)


def test_quaternion_sign_is_canonical():
    p = Pose(quat=(-0.5, -0.5, 0.5, 0.5))
    assert p.quat == (0.5, 0.5, -0.5, -0.5)
    assert Pose(quat=(0.0, -1.0, 0.0, 0.0)).quat == (0.0, 1.0, 0.0, 0.0)
    assert Pose(quat=(-0.0, 0.0, 0.0, -1.0)).quat == (0.0, 0.0, 0.0, 1.0)


def test_invalid_quaternion_rejected():
    with pytest.raises(ValueError):
        Pose(quat=(0.0, 0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        Pose(pos=(1.0, 2.0))


def test_rotvec_round_trip():
    rv = (0.3, -1.2, 0.7)
    assert np.allclose(to_rotvec(from_rotvec(rv)), rv, atol=1e-12)


def test_slerp_small_angle_fallback_is_unit():
    q0 = (1.0, 0.0, 0.0, 0.0)
    q1 = axis_angle((0, 0, 1), 1e-10)
    q = slerp(q0, q1, 0.5)
    assert abs(sum(c * c for c in q) - 1.0) < 1e-15


@given(poses(), poses(), poses())
def test_compose_associative(a, b, c):
    assert close(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-9 * (1 + 3 * 5))


@given(poses())
def test_inverse_two_sided(t):
    assert close(compose(t, invert(t)), IDENTITY, 1e-9 * 10)
    assert close(compose(invert(t), t), IDENTITY, 1e-9 * 10)


@given(poses(), poses())
def test_relative_transform_maps_source_to_new(src, new):
    assert close(apply(relative_transform(src, new), src), new, 1e-8)


@given(poses(), poses(), poses())
def test_apply_is_isometry(t, p1, p2):
    d0 = math.dist(p1.pos, p2.pos)
    d1 = math.dist(apply(t, p1).pos, apply(t, p2).pos)
    assert abs(d0 - d1) < 1e-9 * (1 + d0)


@given(poses(), poses(), st.integers(1, 40))
def test_interpolate_endpoints_and_norm(a, b, n):
    path = interpolate(a, b, n)
    assert len(path) == n
    assert path[-1] == b
    for p in path:
        assert abs(sum(c * c for c in p.quat) - 1.0) < 1e-9
        assert p.quat[0] >= 0.0


@given(poses(), st.integers(1, 10))
def test_interpolate_constant_path(a, n):
    assert all(close(p, a, 1e-12) for p in interpolate(a, a, n))


@given(poses(), poses())
def test_interpolate_ignores_end_quaternion_sign(a, b):
    flipped = Pose(b.pos, tuple(-c for c in b.quat))
    for p, q in zip(interpolate(a, b, 5), interpolate(a, flipped, 5)):
        assert close(p, q, 1e-12)


@settings(max_examples=300)
@given(poses(), poses(), st.floats(0.0, 1.0))
def test_slerp_matches_sign_canonicalized_oracle(a, b, f):
    q0 = np.array(a.quat)
    q1 = np.array(b.quat)
    if q0 @ q1 < 0:
        q1 = -q1
    theta = math.acos(min(1.0, q0 @ q1))
    if theta < 1e-6:
        expected = q0 + f * (q1 - q0)
    else:
        expected = (math.sin((1 - f) * theta) * q0 + math.sin(f * theta) * q1) / math.sin(theta)
    expected /= np.linalg.norm(expected)
    assert quat_distance(slerp(a.quat, b.quat, f), tuple(expected)) < 1e-7
    # antipodal end quaternion gives the same path
    assert quat_distance(slerp(a.quat, tuple(-c for c in b.quat), f), tuple(expected)) < 1e-7
    # the path is the short one: arc lengths add up to the total angle
    total = quat_distance(a.quat, b.quat)
    q = slerp(a.quat, b.quat, f)
    assert total <= math.pi + 1e-12
    assert abs(quat_distance(a.quat, q) + quat_distance(q, b.quat) - total) < 1e-6


def test_rotation_angle_range():
    assert rotation_angle(from_yaw(3.0)) == pytest.approx(3.0)
    assert rotation_angle(from_yaw(-3.0)) == pytest.approx(3.0)
