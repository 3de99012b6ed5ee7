"""Bone-scaling augmentation: remap human keypoint frames onto robot bone lengths."""
from __future__ import annotations

import numpy as np

from .skeleton import DEFAULT_TOPOLOGY, KP_INDEX, KeypointFrame, RobotSpec, SkeletonTopology, bone_lengths, robot_keypoint_frame


class DegenerateBoneError(ValueError):
    """A source bone has zero length, so its direction is undefined."""


def bone_scale_frame(frame: KeypointFrame, topology: SkeletonTopology = DEFAULT_TOPOLOGY,
                     targets: dict = None) -> KeypointFrame:
    """Walk the tree from the pelvis, placing each child at parent' + unit(child - parent) * target.

    Orientations and the root pose are copied unchanged.
    """
    if targets is None:
        raise ValueError("bone length targets are required")
    P = frame.positions
    out = P.copy()
    for bone in topology.pairs:
        if bone not in targets:
            raise ValueError(f"no target length for bone {bone[0]}->{bone[1]}")
        i, k = KP_INDEX[bone[0]], KP_INDEX[bone[1]]
        v = P[k] - P[i]
        n = np.sqrt(v @ v)
        if n == 0.0:
            raise DegenerateBoneError(f"bone {bone[0]}->{bone[1]} has zero length")
        out[k] = out[i] + v / n * targets[bone]
    return KeypointFrame(out, frame.orientations.copy(), normalize=False)


def robot_bone_targets(spec: RobotSpec, topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> dict:
    """Bone lengths of the robot's zero-configuration keypoint frame."""
    return bone_lengths(robot_keypoint_frame(spec, spec.zero_q()), topology)


def scale_motion(motion, targets: dict, topology: SkeletonTopology = DEFAULT_TOPOLOGY, source_spec=None):
    from .dataset import MotionSequence

    frames = []
    for t, f in enumerate(motion.frames):
        try:
            frames.append(bone_scale_frame(f, topology, targets))
        except DegenerateBoneError as e:
            raise DegenerateBoneError(f"frame {t}: {e}") from None
    return MotionSequence(fps=motion.fps, frames=frames, annotation=motion.annotation, source_spec=source_spec)


def augment_corpus(motions: list, specs: list, topology: SkeletonTopology = DEFAULT_TOPOLOGY,
                   keep_originals: bool = True) -> list:
    """Originals followed by one rescaled copy per (motion, spec), tagged with the spec name."""
    tables = [(s.name, robot_bone_targets(s, topology)) for s in specs]
    out = list(motions) if keep_originals else []
    for m_idx, m in enumerate(motions):
        for name, targets in tables:
            try:
                out.append(scale_motion(m, targets, topology, source_spec=name))
            except DegenerateBoneError as e:
                raise DegenerateBoneError(f"motion {m_idx}, {e}") from None
    return out
