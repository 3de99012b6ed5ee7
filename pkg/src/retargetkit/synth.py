"""Synthetic upper-body motion corpora.

Real mocap corpora are not bundled, so tests, benchmarks and the CLI demo draw
motions from a parametric human model driven by smooth joint trajectories.
Spine-chain lengths are modulated per frame to mimic floating bones.
"""
from __future__ import annotations

import numpy as np

from .augment import bone_scale_frame
from .dataset import MotionSequence, TrainingTuple, hindsight_expand
from .geom import quat_from_axis_angle, quat_mul, quat_to_matrix
from .skeleton import DEFAULT_TOPOLOGY, KP_INDEX, BoneClass, KeypointFrame, RobotSpec, robot_keypoint_frame

HUMAN_DIMS = {
    "pelvis_spine": 0.12, "spine_chest": 0.18, "chest_neck": 0.20, "neck_head": 0.12,
    "shoulder_width": 0.18, "shoulder_height": 0.16, "upper_arm": 0.29, "forearm": 0.26,
}

_ARM_LIMITS = {
    "shoulder_pitch": (-2.5, 1.0), "shoulder_roll": (-0.3, 2.0), "shoulder_yaw": (-1.5, 1.5),
    "elbow": (-1.3, 1.2), "wrist_yaw": (-1.5, 1.5), "wrist_pitch": (-1.0, 1.0), "wrist_roll": (-1.5, 1.5),
}


def upper_body_spec(name: str, dims: dict) -> dict:
    """Robot spec dict (JSON schema) for a 2-waist + 3-neck + 2x7-arm upper body."""
    d = dims

    def rev(n, parent, axis, limits, p=(0.0, 0.0, 0.0)):
        return {"name": n, "parent": parent, "offset": {"p": list(p), "q": [1.0, 0.0, 0.0, 0.0]},
                "axis": list(axis), "limits": list(limits)}

    def fixed(n, parent, p):
        return {"name": n, "parent": parent, "type": "fixed", "offset": {"p": list(p), "q": [1.0, 0.0, 0.0, 0.0]}}

    joints = [
        # waist has no yaw: chest twist would be indistinguishable from neck yaw
        # given only neck/head targets
        rev("waist_pitch", "base", (0, 1, 0), (-0.4, 0.5)),
        rev("waist_roll", "waist_pitch", (1, 0, 0), (-0.3, 0.3)),
        fixed("spine", "waist_roll", (0, 0, d["pelvis_spine"])),
        fixed("chest", "spine", (0, 0, d["spine_chest"])),
        rev("neck_yaw", "chest", (0, 0, 1), (-1.0, 1.0), (0, 0, d["chest_neck"])),
        rev("neck_pitch", "neck_yaw", (0, 1, 0), (-0.5, 0.7)),
        rev("neck_roll", "neck_pitch", (1, 0, 0), (-0.4, 0.4)),
        fixed("head", "neck_roll", (0.02, 0, d["neck_head"])),
    ]
    arm_joints = []
    for side, sgn in (("l", 1.0), ("r", -1.0)):
        def lim(k):
            lo, hi = _ARM_LIMITS[k]
            # mirror roll/yaw ranges for the right arm
            return (lo, hi) if sgn > 0 or k in ("shoulder_pitch", "elbow", "wrist_pitch") else (-hi, -lo)

        chain = [
            rev(f"{side}_shoulder_pitch", "chest", (0, 1, 0), lim("shoulder_pitch"),
                (0, sgn * d["shoulder_width"], d["shoulder_height"])),
            rev(f"{side}_shoulder_roll", f"{side}_shoulder_pitch", (1, 0, 0), lim("shoulder_roll")),
            rev(f"{side}_shoulder_yaw", f"{side}_shoulder_roll", (0, 0, 1), lim("shoulder_yaw")),
            rev(f"{side}_elbow", f"{side}_shoulder_yaw", (0, 1, 0), lim("elbow"), (0, 0, -d["upper_arm"])),
            rev(f"{side}_wrist_yaw", f"{side}_elbow", (0, 0, 1), lim("wrist_yaw"), (d["forearm"], 0, 0)),
            rev(f"{side}_wrist_pitch", f"{side}_wrist_yaw", (0, 1, 0), lim("wrist_pitch")),
            rev(f"{side}_wrist_roll", f"{side}_wrist_pitch", (1, 0, 0), lim("wrist_roll")),
        ]
        joints += chain
        arm_joints += [j["name"] for j in chain]
    return {
        "name": name,
        "root": "base",
        "joints": joints,
        "keypoint_map": {
            "pelvis": "base", "spine": "spine", "chest": "chest", "neck": "neck_roll", "head": "head",
            "l_shoulder": "l_shoulder_yaw", "l_elbow": "l_elbow", "l_wrist": "l_wrist_roll",
            "r_shoulder": "r_shoulder_yaw", "r_elbow": "r_elbow", "r_wrist": "r_wrist_roll",
        },
        "torso_joints": ["waist_pitch", "waist_roll", "neck_yaw", "neck_pitch", "neck_roll"],
        "arm_joints": arm_joints,
        "end_effectors": {"head": "head", "l_wrist": "l_wrist_roll", "r_wrist": "r_wrist_roll"},
    }


def human_spec(dims: dict | None = None) -> RobotSpec:
    return RobotSpec.from_dict(upper_body_spec("human", dims or HUMAN_DIMS))


def random_q(spec: RobotSpec, rng: np.random.Generator, margin: float = 0.0) -> dict:
    """Uniform joint configuration inside the (optionally shrunk) limits."""
    span = spec.upper - spec.lower
    lo = spec.lower + margin * span
    hi = spec.upper - margin * span
    return spec.q_dict(rng.uniform(lo, hi))


def joint_trajectory(spec: RobotSpec, n_frames: int, fps: float, rng: np.random.Generator,
                     amplitude: float = 0.35, freq_range=(0.1, 0.6)) -> np.ndarray:
    """(n_frames, n_dof) smooth sinusoidal trajectory centered inside the joint limits."""
    span = spec.upper - spec.lower
    mid = 0.5 * (spec.upper + spec.lower)
    center = mid + rng.uniform(-0.2, 0.2, size=mid.shape) * span
    amp = amplitude * span * rng.uniform(0.2, 1.0, size=mid.shape)
    freq = rng.uniform(*freq_range, size=mid.shape)
    phase = rng.uniform(0.0, 2 * np.pi, size=mid.shape)
    t = np.arange(n_frames)[:, None] / fps
    q = center + amp * np.sin(2 * np.pi * freq * t + phase)
    return np.clip(q, spec.lower, spec.upper)


def human_motion(rng: np.random.Generator, n_frames: int = 60, fps: float = 30.0,
                 body_scale: float | None = None, floating_amp: float = 0.04,
                 annotation: str = "", spec: RobotSpec | None = None) -> MotionSequence:
    """One synthetic human motion; spine-chain bones stretch with the waist pitch."""
    if body_scale is None:
        body_scale = rng.uniform(0.92, 1.08)
    if spec is None:
        spec = human_spec({k: v * body_scale for k, v in HUMAN_DIMS.items()})
    Q = joint_trajectory(spec, n_frames, fps, rng)
    pitch = Q[:, spec.dof_index("waist_pitch")]
    floating = DEFAULT_TOPOLOGY.bones(BoneClass.FLOATING)
    frames = []
    for i in range(n_frames):
        f = robot_keypoint_frame(spec, spec.q_dict(Q[i]))
        if floating_amp:
            lengths = {b: float(np.linalg.norm(f.positions[KP_INDEX[b[1]]] - f.positions[KP_INDEX[b[0]]]))
                       for b in DEFAULT_TOPOLOGY.pairs}
            stretch = 1.0 + floating_amp * np.sin(2.0 * pitch[i])
            for b in floating:
                lengths[b] *= stretch
            f = bone_scale_frame(f, DEFAULT_TOPOLOGY, lengths)
        frames.append(f)
    return MotionSequence(fps=fps, frames=frames, annotation=annotation)


def human_corpus(n_motions: int, seed: int = 0, n_frames: int = 60, fps: float = 30.0) -> list:
    rng = np.random.default_rng(seed)
    return [human_motion(rng, n_frames=n_frames, fps=fps) for _ in range(n_motions)]



CONTEXTS = ("elbows flared out", "elbows tucked in")


def swivel_elbows(frame: KeypointFrame, angle: float) -> KeypointFrame:
    """Swing each elbow about its shoulder-wrist line; hands, head and bone lengths are unchanged."""
    P = frame.positions.copy()
    Q = frame.orientations.copy()
    for side, sign in (("l", 1.0), ("r", -1.0)):
        sh, el, wr = (KP_INDEX[f"{side}_{j}"] for j in ("shoulder", "elbow", "wrist"))
        u = P[wr] - P[sh]
        n = np.linalg.norm(u)
        if n < 1e-9:
            continue
        q = quat_from_axis_angle(u / n, sign * angle)
        P[el] = P[sh] + quat_to_matrix(q) @ (P[el] - P[sh])
        Q[sh] = quat_mul(q, Q[sh])
        Q[el] = quat_mul(q, Q[el])
    return KeypointFrame(P, Q)


def two_context_tuples(motions, angle: float = 0.6, window_h: int = 8) -> list:
    """Each (s, g) appears twice: once per context, with the elbows swung in opposite directions."""
    out = []
    for m in motions:
        for t in hindsight_expand(m, window_h):
            for text, sign in zip(CONTEXTS, (1.0, -1.0)):
                out.append(TrainingTuple(t.s, t.g, text, swivel_elbows(t.a, sign * angle), t.k))
    return out
