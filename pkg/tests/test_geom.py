import numpy as np
import pytest
from hypothesis import given, settings
from scipy.spatial.transform import Rotation

from retargetkit import geom
from retargetkit.geom import Pose6D, quat_geodesic_distance, se3_filter_step, se3_interpolate

from conftest import unit_quats, vec3

I = geom.IDENTITY_QUAT


def sp(q):
    """scipy uses scalar-last order."""
    return Rotation.from_quat([q[1], q[2], q[3], q[0]])


def test_distance_examples():
    assert quat_geodesic_distance(I, I) == 0.0
    assert quat_geodesic_distance(I, [0, 0, 0, 1]) == pytest.approx(np.pi)
    h = np.sqrt(2) / 2
    assert quat_geodesic_distance(I, [h, h, 0, 0]) == pytest.approx(2 * np.arccos(h), abs=1e-15)
    assert quat_geodesic_distance(I, [h, h, 0, 0]) == pytest.approx(np.pi / 2)


def test_distance_rejects_non_finite():
    with pytest.raises(ValueError):
        quat_geodesic_distance(I, [np.nan, 0, 0, 1])
    with pytest.raises(ValueError):
        quat_geodesic_distance([np.inf, 0, 0, 0], I)


@given(unit_quats(), unit_quats())
def test_distance_symmetric_sign_invariant(a, b):
    d = quat_geodesic_distance(a, b)
    assert abs(d - quat_geodesic_distance(b, a)) < 1e-12
    assert abs(d - quat_geodesic_distance(-a, b)) < 1e-12
    assert 0.0 <= d <= np.pi


@given(unit_quats(), unit_quats())
@settings(max_examples=50)
def test_distance_matches_scipy(a, b):
    ref = (sp(a).inv() * sp(b)).magnitude()
    assert quat_geodesic_distance(a, b) == pytest.approx(ref, abs=1e-6)


@given(unit_quats())
def test_matrix_roundtrip_against_scipy(q):
    R = geom.quat_to_matrix(q)
    assert np.allclose(R, sp(q).as_matrix(), atol=1e-12)
    back = geom.matrix_to_quat(R)
    assert back[0] >= 0.0
    assert quat_geodesic_distance(back, q) < 1e-6


@given(unit_quats(), unit_quats())
def test_mul_matches_scipy(a, b):
    got = geom.quat_to_matrix(geom.quat_mul(a, b))
    assert np.allclose(got, (sp(a) * sp(b)).as_matrix(), atol=1e-12)


@given(unit_quats())
def test_rotvec_matches_scipy(q):
    R = geom.quat_to_matrix(q)
    rv = geom.rotvec_from_matrix(R)
    assert np.linalg.norm(rv) <= np.pi + 1e-12
    assert np.allclose(Rotation.from_rotvec(rv).as_matrix(), R, atol=1e-9)
    assert np.linalg.norm(rv) == pytest.approx(sp(q).magnitude(), abs=1e-7)


def test_normalize_and_canonical():
    assert np.allclose(geom.quat_normalize([2, 0, 0, 0]), I)
    with pytest.raises(ValueError):
        geom.quat_normalize([0, 0, 0, 0])
    assert np.array_equal(geom.quat_canonical([-1.0, 0, 0, 0]), I)
    assert np.array_equal(geom.quat_canonical([0.0, -1.0, 0, 0]), [0, 1.0, 0, 0])


def test_interpolate_examples():
    a = Pose6D.identity()
    b = Pose6D([2, 0, 0], I)
    assert se3_interpolate(a, b, 0.0) is a
    assert se3_interpolate(a, b, 1.0) is b
    m = se3_interpolate(a, b, 0.5)
    assert np.allclose(m.position, [1, 0, 0]) and np.allclose(m.orientation, I)
    z90 = Pose6D(np.zeros(3), geom.quat_from_axis_angle([0, 0, 1], np.pi / 2))
    half = se3_interpolate(a, z90, 0.5)
    expect = [np.cos(np.pi / 8), 0, 0, np.sin(np.pi / 8)]
    assert np.allclose(half.orientation, expect, atol=1e-12)


def test_interpolate_range():
    a = Pose6D.identity()
    for t in (-0.1, 1.5):
        with pytest.raises(ValueError):
            se3_interpolate(a, a, t)


def test_interpolate_takes_short_arc():
    a = Pose6D.identity()
    q = geom.quat_from_axis_angle([0, 0, 1], 0.4)
    b = Pose6D(np.zeros(3), -q)  # same rotation, opposite hemisphere
    mid = se3_interpolate(a, b, 0.5)
    assert quat_geodesic_distance(mid.orientation, geom.quat_from_axis_angle([0, 0, 1], 0.2)) < 1e-12


@given(unit_quats(), unit_quats())
@settings(max_examples=50)
def test_slerp_constant_angular_rate(a, b):
    total = quat_geodesic_distance(a, b)
    for t in (0.25, 0.5, 0.8):
        q = geom.slerp(a, b, t)
        assert abs(np.linalg.norm(q) - 1) < 1e-9
        assert quat_geodesic_distance(a, q) == pytest.approx(t * total, abs=1e-6)


def test_slerp_near_identical_falls_back():
    a = I
    b = geom.quat_from_axis_angle([1, 0, 0], 1e-6)
    q = geom.slerp(a, b, 0.5)
    assert np.all(np.isfinite(q)) and abs(np.linalg.norm(q) - 1) < 1e-12


@given(vec3(), vec3())
def test_half_steps_compose_for_translation(p, r):
    a, b = Pose6D(p, I), Pose6D(r, I)
    mid = se3_interpolate(a, b, 0.5)
    two = se3_interpolate(mid, b, 0.5)
    one = se3_interpolate(a, b, 0.75)
    assert np.allclose(two.position, one.position, atol=1e-12, rtol=0)


def test_filter_examples():
    prev = Pose6D.identity()
    raw = Pose6D([1, 0, 0], I)
    assert se3_filter_step(prev, raw, 1.0) is raw
    assert np.allclose(se3_filter_step(prev, raw, 0.25).position, [0.25, 0, 0])
    with pytest.raises(ValueError):
        se3_filter_step(prev, raw, 0.0)
    assert geom.DEFAULT_FILTER_ALPHA == 0.6


@given(vec3(), unit_quats())
def test_filter_fixed_point(p, q):
    pose = Pose6D(p, q)
    for alpha in (0.1, 0.6, 1.0):
        out = se3_filter_step(pose, pose, alpha)
        assert np.allclose(out.position, pose.position, atol=1e-12)
        assert quat_geodesic_distance(out.orientation, pose.orientation) < 1e-7


def test_pose_validation_and_compose():
    with pytest.raises(ValueError):
        Pose6D([np.nan, 0, 0], I)
    p = Pose6D([1, 2, 3], [2, 0, 0, 0])
    assert abs(np.linalg.norm(p.orientation) - 1) < 1e-12
    a = Pose6D([1, 0, 0], geom.quat_from_axis_angle([0, 0, 1], np.pi / 2))
    b = Pose6D([1, 0, 0], I)
    c = a.compose(b)
    assert np.allclose(c.matrix(), a.matrix() @ b.matrix())


def test_distance_half_turn_is_capped():
    assert quat_geodesic_distance([1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]) == np.pi
    assert quat_geodesic_distance([1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]) == 0.0
