import copy

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retargetkit import geom, synth
from retargetkit.geom import Pose6D, quat_geodesic_distance
from retargetkit.skeleton import (DEFAULT_TOPOLOGY, END_EFFECTORS, KEYPOINTS, BoneClass, KeypointFrame,
                                  SkeletonTopology, SpecError, RobotSpec, bone_lengths, forward_kinematics,
                                  robot_keypoint_frame, shipped_robot_specs)

from conftest import unit_quats, vec3
from helpers import planar_arm, planar_arm_dict

SPECS = shipped_robot_specs()


def test_keypoint_set():
    assert len(KEYPOINTS) == 11 == len(set(KEYPOINTS))
    assert END_EFFECTORS == ("head", "l_wrist", "r_wrist")


def test_default_topology_classes():
    assert len(DEFAULT_TOPOLOGY.pairs) == 10
    floating = set(DEFAULT_TOPOLOGY.bones(BoneClass.FLOATING))
    assert floating == {("pelvis", "spine"), ("spine", "chest"), ("chest", "neck"), ("neck", "head")}
    assert len(DEFAULT_TOPOLOGY.bones(BoneClass.FIXED)) == 6


def test_topology_must_be_tree():
    pairs = list(DEFAULT_TOPOLOGY.pairs)
    with pytest.raises(ValueError):
        SkeletonTopology(pairs[:-1], {p: BoneClass.FIXED for p in pairs[:-1]})
    bad = pairs[:-1] + [("l_wrist", "pelvis")]
    with pytest.raises(ValueError):
        SkeletonTopology(bad, {p: BoneClass.FIXED for p in bad})


def test_bone_length_examples():
    P = np.zeros((11, 3))
    Q = np.tile(geom.IDENTITY_QUAT, (11, 1))
    f = KeypointFrame(P, Q)
    assert bone_lengths(f)[("pelvis", "spine")] == 0.0
    P[1] = [0, 0, 0.5]
    assert bone_lengths(KeypointFrame(P, Q))[("pelvis", "spine")] == 0.5


@given(vec3(), unit_quats())
@settings(max_examples=30)
def test_bone_lengths_rigid_invariant(t, q):
    f = synth.human_motion(np.random.default_rng(3), n_frames=2).frames[0]
    a = bone_lengths(f)
    b = bone_lengths(f.transformed(Pose6D(t, q)))
    assert all(abs(a[k] - b[k]) < 1e-12 for k in a)


def test_planar_fk_example():
    spec = planar_arm()
    poses = forward_kinematics(spec, {"j1": np.pi / 2, "j2": 0.0})
    assert np.allclose(poses["tip"].position, [0, 0.5, 0], atol=1e-12)
    poses = forward_kinematics(spec, {"j1": 0.0, "j2": np.pi / 2})
    assert np.allclose(poses["tip"].position, [0.3, 0.2, 0], atol=1e-12)
    assert np.array_equal(poses["base"].position, np.zeros(3))


def test_fk_zero_is_offset_composition():
    for spec in SPECS:
        poses = forward_kinematics(spec, spec.zero_q())
        for j in spec.joints:
            parent = poses[j.parent]
            expect = parent.compose(j.offset)
            assert np.allclose(poses[j.name].position, expect.position, atol=1e-12)
            assert quat_geodesic_distance(poses[j.name].orientation, expect.orientation) < 1e-7


def _chain_oracle(spec, q, frame):
    """Brute-force 4x4 product along the path from the root."""
    by = {j.name: j for j in spec.joints}
    path = []
    while frame != spec.root:
        path.append(by[frame])
        frame = by[frame].parent
    T = np.eye(4)
    for j in reversed(path):
        T = T @ j.offset.matrix()
        if j.revolute:
            R = geom.quat_to_matrix(geom.quat_from_axis_angle(j.axis, q[j.name]))
            Tj = np.eye(4)
            Tj[:3, :3] = R
            T = T @ Tj
    return T


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
def test_fk_matches_chain_oracle(spec):
    rng = np.random.default_rng(0)
    for _ in range(5):
        q = synth.random_q(spec, rng)
        poses = forward_kinematics(spec, q)
        for name in spec.frames:
            assert np.allclose(poses[name].matrix(), _chain_oracle(spec, q, name), atol=1e-12)


def test_fk_errors_and_determinism():
    spec = SPECS[0]
    q = spec.zero_q()
    q.pop(spec.dof_names[0])
    with pytest.raises(ValueError):
        forward_kinematics(spec, q)
    q = synth.random_q(spec, np.random.default_rng(1))
    a = robot_keypoint_frame(spec, q)
    b = robot_keypoint_frame(spec, q)
    assert a == b


def test_fk_rigid_invariance():
    spec = SPECS[1]
    q = synth.random_q(spec, np.random.default_rng(2))
    T = Pose6D([0.3, -1.0, 2.0], geom.quat_from_axis_angle([1, 2, 3], 0.7))
    d = spec.to_dict()
    d["joints"] = copy.deepcopy(d["joints"])
    d["root"] = "world"
    d["joints"].insert(0, {"name": "base", "type": "fixed", "parent": "world",
                           "offset": {"p": T.position.tolist(), "q": T.orientation.tolist()}})
    moved = RobotSpec.from_dict(d)
    a = forward_kinematics(spec, q)
    b = forward_kinematics(moved, q)
    for name in spec.frames:
        expect = T.compose(a[name])
        assert np.allclose(b[name].position, expect.position, atol=1e-12)
        assert quat_geodesic_distance(b[name].orientation, expect.orientation) < 1e-7


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
def test_fixed_bones_constant(spec):
    rng = np.random.default_rng(4)
    fixed = DEFAULT_TOPOLOGY.bones(BoneClass.FIXED)
    ref = bone_lengths(robot_keypoint_frame(spec, spec.zero_q()))
    for _ in range(20):
        got = bone_lengths(robot_keypoint_frame(spec, synth.random_q(spec, rng)))
        assert max(abs(got[b] - ref[b]) for b in fixed) < 1e-12


def test_fixed_bones_match_spec_offsets():
    spec = SPECS[0]
    by = {j.name: j for j in spec.joints}
    f = robot_keypoint_frame(spec, spec.zero_q())
    L = bone_lengths(f)
    elbow = by[spec.keypoint_map["l_elbow"]]
    assert L[("l_shoulder", "l_elbow")] == pytest.approx(np.linalg.norm(elbow.offset.position), abs=1e-12)


def test_arm_joint_changes_downstream_only():
    spec = SPECS[2]
    q = spec.zero_q()
    a = robot_keypoint_frame(spec, q)
    q["l_elbow"] = 0.8
    b = robot_keypoint_frame(spec, q)
    moved = {k for i, k in enumerate(KEYPOINTS) if not np.allclose(a.positions[i], b.positions[i])
             or not np.allclose(a.orientations[i], b.orientations[i])}
    assert moved == {"l_elbow", "l_wrist"}


def test_shipped_specs_differ():
    assert len(SPECS) >= 3
    tables = [bone_lengths(robot_keypoint_frame(s, s.zero_q())) for s in SPECS]
    arms = {round(t[("l_shoulder", "l_elbow")], 6) for t in tables}
    assert len(arms) == len(SPECS)


def test_spec_validation():
    d = planar_arm_dict()
    d["joints"][1]["type"] = "prismatic"
    with pytest.raises(SpecError):
        RobotSpec.from_dict(d)
    d = planar_arm_dict()
    del d["keypoint_map"]["neck"]
    with pytest.raises(SpecError):
        RobotSpec.from_dict(d)
    d = planar_arm_dict()
    d["torso_joints"] = ["j1"]
    with pytest.raises(SpecError):
        RobotSpec.from_dict(d)
    d = planar_arm_dict()
    d["joints"][0]["parent"] = "tip"
    with pytest.raises(SpecError):
        RobotSpec.from_dict(d)
    d = planar_arm_dict()
    d["end_effectors"]["l_wrist"] = "nowhere"
    with pytest.raises(SpecError):
        RobotSpec.from_dict(d)


def test_spec_roundtrip():
    for spec in SPECS:
        again = RobotSpec.from_dict(spec.to_dict())
        q = synth.random_q(spec, np.random.default_rng(5))
        assert robot_keypoint_frame(spec, q) == robot_keypoint_frame(again, q)


def test_keypoint_frame_contract():
    with pytest.raises(ValueError):
        KeypointFrame(np.full((11, 3), np.nan), np.tile(geom.IDENTITY_QUAT, (11, 1)))
    f = KeypointFrame(np.zeros((11, 3)), np.tile([2.0, 0, 0, 0], (11, 1)))
    assert np.allclose(np.linalg.norm(f.orientations, axis=1), 1.0)
    poses = f.poses()
    assert KeypointFrame.from_poses(poses) == f
    poses.pop("head")
    with pytest.raises(ValueError):
        KeypointFrame.from_poses(poses)


@given(st.lists(st.floats(-1.0, 1.0), min_size=2, max_size=2))
def test_planar_tip_on_workspace(q):
    spec = planar_arm()
    tip = forward_kinematics(spec, {"j1": q[0], "j2": q[1]})["tip"].position
    expect = 0.3 * np.array([np.cos(q[0]), np.sin(q[0]), 0]) + 0.2 * np.array(
        [np.cos(q[0] + q[1]), np.sin(q[0] + q[1]), 0])
    assert np.allclose(tip, expect, atol=1e-12)
