"""Canonical 11-keypoint upper-body chain, robot kinematic specs, and forward kinematics."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from . import kernels
from .geom import IDENTITY_QUAT, Pose6D, matrix_to_quat, quat_mul, quat_to_matrix

KEYPOINTS = (
    "pelvis", "spine", "chest", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
)
KP_INDEX = {name: i for i, name in enumerate(KEYPOINTS)}
END_EFFECTORS = ("head", "l_wrist", "r_wrist")


class SpecError(ValueError):
    """Malformed robot spec or topology."""


class BoneClass(Enum):
    FIXED = "fixed"
    FLOATING = "floating"


@dataclass(frozen=True)
class SkeletonTopology:
    pairs: tuple
    classes: Mapping

    def __post_init__(self):
        seen = {"pelvis"}
        for parent, child in self.pairs:
            if parent not in seen:
                raise SpecError(f"bone {parent}->{child} listed before its parent is reachable")
            if child in seen:
                raise SpecError(f"keypoint {child} has two parents")
            seen.add(child)
        if seen != set(KEYPOINTS):
            raise SpecError(f"topology does not cover all keypoints: missing {set(KEYPOINTS) - seen}")

    def bones(self, bone_class: BoneClass | None = None):
        if bone_class is None:
            return list(self.pairs)
        return [b for b in self.pairs if self.classes[b] is bone_class]


# topological order: every parent precedes its children
DEFAULT_TOPOLOGY = SkeletonTopology(
    pairs=(
        ("pelvis", "spine"), ("spine", "chest"), ("chest", "neck"), ("neck", "head"),
        ("chest", "l_shoulder"), ("l_shoulder", "l_elbow"), ("l_elbow", "l_wrist"),
        ("chest", "r_shoulder"), ("r_shoulder", "r_elbow"), ("r_elbow", "r_wrist"),
    ),
    classes=MappingProxyType({
        ("pelvis", "spine"): BoneClass.FLOATING,
        ("spine", "chest"): BoneClass.FLOATING,
        ("chest", "neck"): BoneClass.FLOATING,
        ("neck", "head"): BoneClass.FLOATING,
        ("chest", "l_shoulder"): BoneClass.FIXED,
        ("l_shoulder", "l_elbow"): BoneClass.FIXED,
        ("l_elbow", "l_wrist"): BoneClass.FIXED,
        ("chest", "r_shoulder"): BoneClass.FIXED,
        ("r_shoulder", "r_elbow"): BoneClass.FIXED,
        ("r_elbow", "r_wrist"): BoneClass.FIXED,
    }),
)


class KeypointFrame:
    """11 keypoint poses stored as arrays in ``KEYPOINTS`` order.

    ``positions`` is (11, 3) meters, ``orientations`` is (11, 4) unit quaternions (w, x, y, z).
    """

    __slots__ = ("positions", "orientations")

    def __init__(self, positions, orientations, normalize: bool = True):
        P = np.array(positions, dtype=float).reshape(len(KEYPOINTS), 3)
        Q = np.array(orientations, dtype=float).reshape(len(KEYPOINTS), 4)
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Q))):
            raise ValueError("keypoint frame has non-finite values")
        if normalize:
            Q = Q / np.linalg.norm(Q, axis=1, keepdims=True)
        self.positions = P
        self.orientations = Q

    @classmethod
    def from_poses(cls, poses: Mapping[str, Pose6D]) -> "KeypointFrame":
        missing = [k for k in KEYPOINTS if k not in poses]
        if missing:
            raise ValueError(f"keypoint frame missing {missing}")
        return cls([poses[k].position for k in KEYPOINTS], [poses[k].orientation for k in KEYPOINTS])

    def __getitem__(self, name: str) -> Pose6D:
        i = KP_INDEX[name]
        return Pose6D(self.positions[i], self.orientations[i])

    def poses(self) -> dict:
        return {k: self[k] for k in KEYPOINTS}

    def copy(self) -> "KeypointFrame":
        return KeypointFrame(self.positions.copy(), self.orientations.copy(), normalize=False)

    def transformed(self, pose: Pose6D) -> "KeypointFrame":
        """Apply a global rigid transform to every keypoint."""
        R = quat_to_matrix(pose.orientation)
        Q = np.array([quat_mul(pose.orientation, q) for q in self.orientations])
        return KeypointFrame(self.positions @ R.T + pose.position, Q)

    def __eq__(self, other):
        if not isinstance(other, KeypointFrame):
            return NotImplemented
        return np.array_equal(self.positions, other.positions) and np.array_equal(self.orientations, other.orientations)

    def __repr__(self):
        return f"KeypointFrame(pelvis={self.positions[0].tolist()}, ...)"


def bone_lengths(frame: KeypointFrame, topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> dict:
    P = frame.positions
    return {(a, b): float(np.linalg.norm(P[KP_INDEX[b]] - P[KP_INDEX[a]])) for a, b in topology.pairs}


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent: str
    offset: Pose6D
    axis: np.ndarray | None  # None for a fixed (non-actuated) frame
    limits: tuple = (-np.pi, np.pi)

    @property
    def revolute(self) -> bool:
        return self.axis is not None


@dataclass(frozen=True)
class RobotSpec:
    """Kinematic tree with joint limits, keypoint mapping and torso/arm partitions.

    A joint's frame is ``parent_frame * offset * Rot(axis, q)``. Entries of type
    ``fixed`` add a frame without a degree of freedom.
    """

    name: str
    joints: tuple
    keypoint_map: Mapping
    torso_joints: tuple
    arm_joints: tuple
    end_effectors: Mapping
    root: str = "base"
    # derived arrays for the kernels
    _arrays: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        order = _topological_order(self.root, self.joints)
        frames = [j.name for j in order]
        if len(set(frames)) != len(frames) or self.root in frames:
            raise SpecError(f"{self.name}: duplicate frame names")
        idx = {n: i for i, n in enumerate(frames)}
        dofs = [j.name for j in order if j.revolute]
        dof_idx = {n: i for i, n in enumerate(dofs)}
        n = len(order)
        parent = np.array([-1 if j.parent == self.root else idx[j.parent] for j in order], dtype=np.int64)
        off_R = np.array([quat_to_matrix(j.offset.orientation) for j in order]).reshape(n, 3, 3)
        off_p = np.array([j.offset.position for j in order]).reshape(n, 3)
        axis = np.array([j.axis if j.revolute else np.zeros(3) for j in order]).reshape(n, 3)
        dof = np.array([dof_idx[j.name] if j.revolute else -1 for j in order], dtype=np.int64)
        lower = np.array([j.limits[0] for j in order if j.revolute])
        upper = np.array([j.limits[1] for j in order if j.revolute])

        for kp in KEYPOINTS:
            f = self.keypoint_map.get(kp)
            if f is None:
                raise SpecError(f"{self.name}: keypoint {kp} not mapped to a frame")
            if f != self.root and f not in idx:
                raise SpecError(f"{self.name}: keypoint {kp} mapped to unknown frame {f}")
        for ee in END_EFFECTORS:
            f = self.end_effectors.get(ee)
            if f is None or (f != self.root and f not in idx):
                raise SpecError(f"{self.name}: end-effector {ee} frame {f!r} not reachable")
        for jn in tuple(self.torso_joints) + tuple(self.arm_joints):
            if jn not in dof_idx:
                raise SpecError(f"{self.name}: partition joint {jn} is not a revolute joint")
        if set(self.torso_joints) & set(self.arm_joints):
            raise SpecError(f"{self.name}: torso and arm joint sets overlap")

        object.__setattr__(self, "_arrays", {
            "frames": tuple(frames), "frame_index": idx, "dofs": tuple(dofs), "dof_index": dof_idx,
            "parent": parent, "off_R": off_R, "off_p": off_p, "axis": axis, "dof": dof,
            "lower": lower, "upper": upper,
        })

    # -- derived views --------------------------------------------------
    @property
    def frames(self) -> tuple:
        return self._arrays["frames"]

    @property
    def dof_names(self) -> tuple:
        return self._arrays["dofs"]

    @property
    def lower(self) -> np.ndarray:
        return self._arrays["lower"]

    @property
    def upper(self) -> np.ndarray:
        return self._arrays["upper"]

    def frame_index(self, frame: str) -> int:
        """Kernel index of a frame; -1 denotes the root."""
        if frame == self.root:
            return -1
        return self._arrays["frame_index"][frame]

    def chain_joints(self, frame: str) -> tuple:
        """Revolute joints on the path from the root to ``frame``, root first."""
        by_name = {j.name: j for j in self.joints}
        out = []
        while frame != self.root:
            j = by_name[frame]
            if j.revolute:
                out.append(j.name)
            frame = j.parent
        return tuple(reversed(out))

    def dof_index(self, joint: str) -> int:
        return self._arrays["dof_index"][joint]

    def q_vector(self, q: Mapping[str, float]) -> np.ndarray:
        missing = [n for n in self.dof_names if n not in q]
        if missing:
            raise ValueError(f"joint config missing values for {missing}")
        v = np.array([float(q[n]) for n in self.dof_names])
        if not np.all(np.isfinite(v)):
            raise ValueError("joint config has non-finite values")
        return v

    def q_dict(self, v) -> dict:
        return {n: float(x) for n, x in zip(self.dof_names, v)}

    def zero_q(self) -> dict:
        return {n: 0.0 for n in self.dof_names}

    def clamp(self, v: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(v, self.lower), self.upper)

    def fk_arrays(self, qv: np.ndarray):
        a = self._arrays
        return kernels.fk(a["parent"], a["off_R"], a["off_p"], a["axis"], a["dof"], qv)

    def fd_jacobian(self, qv: np.ndarray, active: np.ndarray, target_frames: np.ndarray, h: float):
        a = self._arrays
        return kernels.fd_jacobian(a["parent"], a["off_R"], a["off_p"], a["axis"], a["dof"],
                                   qv, active, target_frames, h)

    def frame_pose_arrays(self, R, p, frame: str):
        i = self.frame_index(frame)
        if i < 0:
            return np.eye(3), np.zeros(3)
        return R[i], p[i]

    # -- I/O ------------------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict) -> "RobotSpec":
        try:
            joints = []
            for j in d["joints"]:
                kind = j.get("type", "revolute")
                off = j.get("offset", {})
                offset = Pose6D(off.get("p", [0.0, 0.0, 0.0]), off.get("q", list(IDENTITY_QUAT)))
                if kind == "revolute":
                    axis = np.asarray(j["axis"], dtype=float)
                    if np.linalg.norm(axis) == 0.0:
                        raise SpecError(f"joint {j['name']}: zero rotation axis")
                    lo, hi = j.get("limits", [-np.pi, np.pi])
                    if not lo <= hi:
                        raise SpecError(f"joint {j['name']}: lower limit exceeds upper")
                    joints.append(JointSpec(j["name"], j["parent"], offset, axis / np.linalg.norm(axis), (float(lo), float(hi))))
                elif kind == "fixed":
                    joints.append(JointSpec(j["name"], j["parent"], offset, None, (0.0, 0.0)))
                else:
                    raise SpecError(f"joint {j['name']}: unsupported joint type {kind!r} (revolute only)")
            return cls(
                name=d["name"],
                joints=tuple(joints),
                keypoint_map=MappingProxyType(dict(d["keypoint_map"])),
                torso_joints=tuple(d["torso_joints"]),
                arm_joints=tuple(d["arm_joints"]),
                end_effectors=MappingProxyType(dict(d["end_effectors"])),
                root=d.get("root", "base"),
            )
        except KeyError as e:
            raise SpecError(f"robot spec missing field {e}") from None

    def to_dict(self) -> dict:
        joints = []
        for j in self.joints:
            e = {"name": j.name, "parent": j.parent,
                 "offset": {"p": j.offset.position.tolist(), "q": j.offset.orientation.tolist()}}
            if j.revolute:
                e.update(axis=j.axis.tolist(), limits=list(j.limits))
            else:
                e["type"] = "fixed"
            joints.append(e)
        return {"name": self.name, "root": self.root, "joints": joints,
                "keypoint_map": dict(self.keypoint_map), "torso_joints": list(self.torso_joints),
                "arm_joints": list(self.arm_joints), "end_effectors": dict(self.end_effectors)}


def _topological_order(root, joints):
    children = {}
    for j in joints:
        children.setdefault(j.parent, []).append(j)
    order, stack, visited = [], [root], {root}
    while stack:
        node = stack.pop()
        for j in reversed(children.get(node, [])):
            if j.name in visited:
                raise SpecError(f"cycle or duplicate at frame {j.name}")
            visited.add(j.name)
            order.append(j)
            stack.append(j.name)
    if len(order) != len(joints):
        stray = sorted(j.name for j in joints if j.name not in visited)
        raise SpecError(f"frames not connected to root (cyclic or dangling): {stray}")
    return order


def load_robot_spec(path) -> RobotSpec:
    with open(path) as f:
        return RobotSpec.from_dict(json.load(f))


_ROBOT_DIR = Path(__file__).parent / "data" / "robots"


def shipped_robot_specs() -> list:
    """Robot specs bundled with the package, sorted by file name."""
    return [load_robot_spec(p) for p in sorted(_ROBOT_DIR.glob("*.json"))]


def forward_kinematics(spec: RobotSpec, q: Mapping[str, float]) -> dict:
    """Pose of every frame (root included) as Pose6D, keyed by frame name."""
    R, p = spec.fk_arrays(spec.q_vector(q))
    out = {spec.root: Pose6D.identity()}
    for i, name in enumerate(spec.frames):
        out[name] = Pose6D(p[i], matrix_to_quat(R[i]))
    return out


def robot_keypoint_frame(spec: RobotSpec, q: Mapping[str, float]) -> KeypointFrame:
    R, p = spec.fk_arrays(spec.q_vector(q))
    return keypoint_frame_from_arrays(spec, R, p)


def keypoint_frame_from_arrays(spec: RobotSpec, R, p) -> KeypointFrame:
    P = np.empty((len(KEYPOINTS), 3))
    Q = np.empty((len(KEYPOINTS), 4))
    for k, kp in enumerate(KEYPOINTS):
        Rk, pk = spec.frame_pose_arrays(R, p, spec.keypoint_map[kp])
        P[k] = pk
        Q[k] = matrix_to_quat(Rk)
    return KeypointFrame(P, Q, normalize=False)
