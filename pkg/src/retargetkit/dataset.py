"""Motion files, (s, g, l, a) tuples, hindsight expansion and observation masking."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .skeleton import END_EFFECTORS, KEYPOINTS, KP_INDEX, KeypointFrame

EE_INDEX = np.array([KP_INDEX[k] for k in END_EFFECTORS])
DEFAULT_WINDOW = 8


class MotionFormatError(ValueError):
    """Motion or tuple file does not follow the schema."""


@dataclass
class MotionSequence:
    fps: float
    frames: list
    annotation: str = ""
    source_spec: str | None = None

    def __post_init__(self):
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    def __len__(self):
        return len(self.frames)

    def subsample(self, factor: int) -> "MotionSequence":
        """Keep every ``factor``-th frame; fps scales down accordingly."""
        if factor < 1:
            raise ValueError("subsample factor must be >= 1")
        return MotionSequence(self.fps / factor, self.frames[::factor], self.annotation, self.source_spec)


class GoalSet:
    """Target poses for head, left wrist and right wrist (rows in END_EFFECTORS order)."""

    __slots__ = ("positions", "orientations")

    def __init__(self, positions, orientations):
        self.positions = np.asarray(positions, dtype=float).reshape(3, 3)
        self.orientations = np.asarray(orientations, dtype=float).reshape(3, 4)

    @classmethod
    def from_frame(cls, frame: KeypointFrame) -> "GoalSet":
        return cls(frame.positions[EE_INDEX].copy(), frame.orientations[EE_INDEX].copy())

    def __eq__(self, other):
        return (isinstance(other, GoalSet) and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.orientations, other.orientations))

    def to_json(self) -> dict:
        return {k: {"p": self.positions[i].tolist(), "q": self.orientations[i].tolist()}
                for i, k in enumerate(END_EFFECTORS)}

    @classmethod
    def from_json(cls, d: dict) -> "GoalSet":
        return cls([d[k]["p"] for k in END_EFFECTORS], [d[k]["q"] for k in END_EFFECTORS])


@dataclass
class TrainingTuple:
    s: KeypointFrame
    g: GoalSet
    l: str
    a: KeypointFrame
    k: int = 1


@dataclass(frozen=True)
class ObservationMask:
    keypoints: frozenset = frozenset()
    label: str = "None"

    def __post_init__(self):
        bad = set(self.keypoints) - set(KEYPOINTS)
        if bad:
            raise ValueError(f"unknown keypoints in mask: {sorted(bad)}")
        object.__setattr__(self, "keypoints", frozenset(self.keypoints))


# single-letter labels used by the mask ablation harness
MASK_PRESETS = {
    "None": ObservationMask(frozenset(), "None"),
    "P": ObservationMask(frozenset({"pelvis"}), "P"),
    "N": ObservationMask(frozenset({"neck"}), "N"),
    "S": ObservationMask(frozenset({"l_shoulder", "r_shoulder"}), "S"),
    "E": ObservationMask(frozenset({"l_elbow", "r_elbow"}), "E"),
    "W": ObservationMask(frozenset({"l_wrist", "r_wrist"}), "W"),
    "T": ObservationMask(frozenset({"neck", "spine", "chest"}), "T"),
}


@dataclass
class MaskedState:
    frame: KeypointFrame
    presence: np.ndarray = field(default_factory=lambda: np.ones(len(KEYPOINTS), dtype=bool))


def apply_mask(s: KeypointFrame, mask: ObservationMask | None = None) -> MaskedState:
    """Blank masked keypoints to (origin, identity) and clear their presence flag."""
    presence = np.ones(len(KEYPOINTS), dtype=bool)
    if not mask or not mask.keypoints:
        return MaskedState(s, presence)
    P = s.positions.copy()
    Q = s.orientations.copy()
    for name in mask.keypoints:
        i = KP_INDEX[name]
        P[i] = 0.0
        Q[i] = (1.0, 0.0, 0.0, 0.0)
        presence[i] = False
    return MaskedState(KeypointFrame(P, Q, normalize=False), presence)


def build_tuples(motion: MotionSequence) -> list:
    """Successive-frame tuples: state t, action t+1, goal = end effectors of t+1."""
    if len(motion.frames) < 2:
        warnings.warn("motion has fewer than 2 frames; no tuples built", RuntimeWarning, stacklevel=2)
        return []
    fr = motion.frames
    return [TrainingTuple(fr[t], GoalSet.from_frame(fr[t + 1]), motion.annotation, fr[t + 1], 1)
            for t in range(len(fr) - 1)]


def hindsight_expand(motion: MotionSequence, window_h: int = DEFAULT_WINDOW) -> list:
    """Pair each state with every future frame up to ``window_h`` steps ahead (clamped at the end)."""
    if window_h < 1:
        raise ValueError(f"hindsight window must be >= 1, got {window_h}")
    fr = motion.frames
    T = len(fr)
    if T < 2:
        warnings.warn("motion has fewer than 2 frames; no tuples built", RuntimeWarning, stacklevel=2)
        return []
    goals = [GoalSet.from_frame(f) for f in fr]
    out = []
    for t in range(T - 1):
        for k in range(1, min(window_h, T - 1 - t) + 1):
            out.append(TrainingTuple(fr[t], goals[t + k], motion.annotation, fr[t + k], k))
    return out


def hindsight_count(T: int, window_h: int) -> int:
    return sum(min(window_h, T - 1 - t) for t in range(T - 1))


# -- annotation stub -------------------------------------------------------

DEFAULT_TEMPLATES = {
    "head": "the head",
    "l_wrist": "the left hand",
    "r_wrist": "the right hand",
    "both": "both hands",
    "up": "a person raises {part}",
    "down": "a person lowers {part}",
    "level": "a person moves {part}",
    "still": "a person stands still",
    "moving_ratio": 0.25,
    "min_path": 1e-3,
}


def stub_annotate(motion: MotionSequence, template_rules: dict | None = None) -> MotionSequence:
    """Fill an empty annotation with fixed-template text describing which end effectors move."""
    if motion.annotation:
        return motion
    if len(motion.frames) < 2:
        raise ValueError("annotation stub needs at least 2 frames")
    rules = dict(DEFAULT_TEMPLATES, **(template_rules or {}))
    P = np.array([f.positions[EE_INDEX] for f in motion.frames])  # (T, 3, 3)
    path = np.linalg.norm(np.diff(P, axis=0), axis=2).sum(axis=0)
    top = path.max()
    if top < rules["min_path"]:
        text = rules["still"]
    else:
        moving = [END_EFFECTORS[i] for i in range(3) if path[i] >= rules["moving_ratio"] * top and path[i] >= rules["min_path"]]
        if "l_wrist" in moving and "r_wrist" in moving:
            parts = [rules["both"]] + ([rules["head"]] if "head" in moving else [])
        else:
            parts = [rules[m] for m in moving]
        part = " and ".join(parts)
        idx = [END_EFFECTORS.index(m) for m in moving]
        dz = float(np.mean(P[-1, idx, 2] - P[0, idx, 2]))
        key = "up" if dz > 0.02 else "down" if dz < -0.02 else "level"
        text = rules[key].format(part=part)
    return MotionSequence(motion.fps, motion.frames, text, motion.source_spec)


# -- file formats ----------------------------------------------------------

def frame_to_json(f: KeypointFrame) -> list:
    return [{"p": f.positions[i].tolist(), "q": f.orientations[i].tolist()} for i in range(len(KEYPOINTS))]


def frame_from_json(rows, order=KEYPOINTS, where: str = "frame", quat_tol: float = 1e-6) -> KeypointFrame:
    if not isinstance(rows, list) or len(rows) != len(order):
        n = len(rows) if isinstance(rows, list) else type(rows).__name__
        raise MotionFormatError(f"{where}: expected {len(order)} keypoints, got {n}")
    P = np.empty((len(KEYPOINTS), 3))
    Q = np.empty((len(KEYPOINTS), 4))
    for j, (name, row) in enumerate(zip(order, rows)):
        try:
            p = np.array(row["p"], dtype=float)
            q = np.array(row["q"], dtype=float)
        except (KeyError, TypeError, ValueError):
            raise MotionFormatError(f"{where}, keypoint {name}: needs numeric 'p' and 'q'") from None
        if p.shape != (3,) or q.shape != (4,):
            raise MotionFormatError(f"{where}, keypoint {name}: 'p' needs 3 and 'q' 4 components")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise MotionFormatError(f"{where}, keypoint {name}: non-finite value")
        if abs(np.linalg.norm(q) - 1.0) > quat_tol:
            raise MotionFormatError(f"{where}, keypoint {name}: quaternion norm {np.linalg.norm(q):.6g} is not unit")
        i = KP_INDEX[name]
        P[i] = p
        Q[i] = q
    return KeypointFrame(P, Q, normalize=False)


def motion_to_json(motion: MotionSequence) -> dict:
    return {"fps": motion.fps, "annotation": motion.annotation, "source_spec": motion.source_spec,
            "joint_order": list(KEYPOINTS), "frames": [frame_to_json(f) for f in motion.frames]}


def motion_from_json(d: dict) -> MotionSequence:
    if not isinstance(d, dict):
        raise MotionFormatError("motion file must hold a JSON object")
    for key in ("fps", "frames"):
        if key not in d:
            raise MotionFormatError(f"motion file missing field {key!r}")
    order = tuple(d.get("joint_order", KEYPOINTS))
    if sorted(order) != sorted(KEYPOINTS):
        raise MotionFormatError(f"joint_order must list the 11 canonical keypoints, got {list(order)}")
    fps = d["fps"]
    if not isinstance(fps, (int, float)) or not math.isfinite(fps) or fps <= 0:
        raise MotionFormatError(f"fps must be a positive number, got {fps!r}")
    frames = [frame_from_json(rows, order, where=f"frame {t}") for t, rows in enumerate(d["frames"])]
    ann = d.get("annotation") or ""
    if not isinstance(ann, str):
        raise MotionFormatError("annotation must be a string")
    return MotionSequence(float(fps), frames, ann, d.get("source_spec"))


def save_motion(motion: MotionSequence, path) -> None:
    with open(path, "w") as f:
        json.dump(motion_to_json(motion), f)


def load_motion(path) -> MotionSequence:
    with open(path) as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise MotionFormatError(f"{path}: invalid JSON ({e})") from None
    return motion_from_json(d)


def tuple_to_json(tp: TrainingTuple) -> dict:
    return {"s": frame_to_json(tp.s), "g": tp.g.to_json(), "l": tp.l, "a": frame_to_json(tp.a), "k": tp.k}


def tuple_from_json(d: dict, where: str = "tuple") -> TrainingTuple:
    try:
        return TrainingTuple(frame_from_json(d["s"], where=f"{where}.s"), GoalSet.from_json(d["g"]),
                             d.get("l", ""), frame_from_json(d["a"], where=f"{where}.a"), int(d.get("k", 1)))
    except KeyError as e:
        raise MotionFormatError(f"{where}: missing field {e}") from None


def save_tuples(tuples, path) -> int:
    n = 0
    with open(path, "w") as f:
        for tp in tuples:
            f.write(json.dumps(tuple_to_json(tp)))
            f.write("\n")
            n += 1
    return n


def load_tuples(path) -> list:
    out = []
    with open(path) as f:
        for i, line in enumerate(f):
            if line.strip():
                out.append(tuple_from_json(json.loads(line), where=f"line {i + 1}"))
    return out

