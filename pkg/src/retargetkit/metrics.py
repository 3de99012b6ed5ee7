"""Pose-accuracy, bone-stability, distributional and retrieval metrics plus the mask ablation harness."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .skeleton import DEFAULT_TOPOLOGY, KEYPOINTS, KP_INDEX, BoneClass, KeypointFrame, SkeletonTopology, bone_lengths

EA = ("head", "l_wrist", "r_wrist")
HS = tuple(KEYPOINTS)
SUBSETS = {"EA": EA, "HS": HS}

EMBEDDING_NOTE = ("FMD, MM-Dist and R-Precision are computed in this package's own policy embedding "
                   "space; only relative comparisons between runs scored by the same model are meaningful.")


def _subset_index(subset) -> np.ndarray:
    if isinstance(subset, str):
        subset = SUBSETS[subset]
    subset = tuple(subset)
    if not subset:
        raise ValueError("joint subset is empty")
    unknown = [k for k in subset if k not in KP_INDEX]
    if unknown:
        raise ValueError(f"unknown keypoints in subset: {unknown}")
    return np.array([KP_INDEX[k] for k in subset])


def mpjpe(pred: KeypointFrame, ref: KeypointFrame, subset=HS) -> float:
    idx = _subset_index(subset)
    return float(np.mean(np.linalg.norm(pred.positions[idx] - ref.positions[idx], axis=1)))


def mpjoe(pred: KeypointFrame, ref: KeypointFrame, subset=HS) -> float:
    idx = _subset_index(subset)
    a, b = pred.orientations[idx], ref.orientations[idx]
    # chord form of 2*arccos|<a,b>|; exact at identity where arccos loses ~1e-8
    sign = np.where(np.sum(a * b, axis=1) < 0.0, -1.0, 1.0)[:, None]
    chord = np.linalg.norm(a - sign * b, axis=1)
    return float(np.mean(np.minimum(4.0 * np.arcsin(np.minimum(chord / 2.0, 1.0)), np.pi)))


def mean_pose_errors(preds, refs, subset=HS) -> dict:
    """Average of per-frame mpjpe/mpjoe over paired frame lists."""
    if len(preds) != len(refs) or not preds:
        raise ValueError("need equally many, nonzero, predicted and reference frames")
    return {"mpjpe": float(np.mean([mpjpe(p, r, subset) for p, r in zip(preds, refs)])),
            "mpjoe": float(np.mean([mpjoe(p, r, subset) for p, r in zip(preds, refs)]))}


def bone_size_stability(pred_frames, ref_lengths, bone_class: BoneClass,
                        topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> float:
    """Mean |length - reference| over frames and bones of one class.

    ``ref_lengths`` is a single table or one table per frame.
    """
    if not pred_frames:
        raise ValueError("no frames to measure")
    bones = topology.bones(bone_class)
    if not bones:
        raise ValueError(f"topology has no {bone_class.name.lower()} bones")
    per_frame = isinstance(ref_lengths, (list, tuple))
    if per_frame and len(ref_lengths) != len(pred_frames):
        raise ValueError("one reference table per frame required")
    errs = []
    for i, f in enumerate(pred_frames):
        ref = ref_lengths[i] if per_frame else ref_lengths
        got = bone_lengths(f, topology)
        errs.extend(abs(got[b] - ref[b]) for b in bones)
    return float(np.mean(errs))


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        c = np.atleast_2d(np.asarray(self.cov, dtype=float))
        self.cov = 0.5 * (c + c.T)

    @classmethod
    def from_samples(cls, X) -> "GaussianStats":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ValueError("need at least 2 feature vectors")
        return cls(X.mean(axis=0), np.cov(X, rowvar=False))


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def fmd(gen_features, real_features) -> float:
    g = gen_features if isinstance(gen_features, GaussianStats) else GaussianStats.from_samples(gen_features)
    r = real_features if isinstance(real_features, GaussianStats) else GaussianStats.from_samples(real_features)
    if g.mean.shape != r.mean.shape:
        raise ValueError(f"feature dimensions differ: {g.mean.shape[0]} vs {r.mean.shape[0]}")
    sr = _psd_sqrt(r.cov)
    cross = _psd_sqrt(sr @ g.cov @ sr)
    d = g.mean - r.mean
    val = float(d @ d + np.trace(g.cov) + np.trace(r.cov) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def _paired(a, b):
    A = np.asarray(a, dtype=float)
    B = np.asarray(b, dtype=float)
    if A.ndim != 2 or B.ndim != 2:
        raise ValueError("embeddings must be 2-D (count, dim)")
    if A.shape[0] != B.shape[0]:
        raise ValueError(f"count mismatch: {A.shape[0]} texts vs {B.shape[0]} motions")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return A, B


def mm_dist(text_embeds, motion_embeds) -> float:
    A, B = _paired(text_embeds, motion_embeds)
    return float(np.mean(np.linalg.norm(A - B, axis=1)))


def r_precision(text_embeds, motion_embeds, top_k: int = 1) -> float:
    A, B = _paired(text_embeds, motion_embeds)
    n = A.shape[0]
    if n < 2:
        raise ValueError("need at least 2 pairs")
    if not 1 <= top_k < n:
        raise IndexError(f"top_k must be in [1, {n - 1}], got {top_k}")
    D = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=2)
    hits = 0
    for i in range(n):
        order = np.argsort(D[i], kind="stable")  # ties keep the lower index first
        hits += i in order[:top_k]
    return hits / n


# -- model-space features ------------------------------------------------------

def _require_trained(model):
    from .policy import PolicyConfigError

    if not model.norm.fitted:
        raise PolicyConfigError("model has not been trained; features would be meaningless")


def _frame_batch(model, frames):
    from .dataset import GoalSet
    from .policy import proprio_features

    xp = np.stack([proprio_features(f, GoalSet.from_frame(f)) for f in frames])
    xt = np.zeros((len(frames), model.config.d_text))
    return xp, xt


def feature_extract(source, model, space: str = "trunk") -> np.ndarray:
    """Mean-pooled per-frame features of a motion (or list of frames), or the encoded text of a string.

    Each frame is encoded on its own (state = frame, goal = its end effectors, no text).
    ``space="trunk"`` pools the penultimate trunk layer; ``space="aligned"`` pools the
    proprioception encoder output, which lives in the same dimension as text features.
    """
    _require_trained(model)
    if isinstance(source, str):
        xt = model.text_vector(source)[None, :]
        xp = np.zeros((1, model.W[0].shape[1]))
        _, cache = model.forward(xp, xt, keep=True)
        return cache["aligned"][0, model.config.d_proprio:].copy()
    frames = list(getattr(source, "frames", source))
    if not frames:
        raise ValueError("no frames to extract features from")
    xp, xt = _frame_batch(model, frames)
    _, cache = model.forward(xp, xt, keep=True)
    if space == "trunk":
        feats = cache["penultimate"]
    elif space == "aligned":
        feats = cache["aligned"][:, :model.config.d_proprio]
    else:
        raise ValueError(f"unknown feature space {space!r}")
    return feats.mean(axis=0)


def ablation_run(model, tuples, masks) -> list:
    """One row per mask, in the given order: EA/HS mpjpe and mpjoe of predictions on masked states."""
    from .policy import encode, predict_batch

    refs = [t.a for t in tuples]
    rows = []
    for m in masks:
        P, Q = predict_batch(model, encode(model, tuples, masks=m))
        preds = [KeypointFrame(P[i], Q[i], normalize=False) for i in range(len(tuples))]
        row = {"mask": "None" if m is None else m.label}
        for name, sub in SUBSETS.items():
            row[name.lower()] = mean_pose_errors(preds, refs, sub)
        rows.append(row)
    return rows


def evaluation_report(preds, refs, ref_lengths=None, gen_features=None, real_features=None,
                      text_embeds=None, motion_embeds=None, topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> dict:
    """Assemble the JSON evaluation report; optional parts are null when inputs are absent."""
    report = {"ea": mean_pose_errors(preds, refs, EA), "hs": mean_pose_errors(preds, refs, HS),
              "bone_stability": None, "fmd": None, "mm_dist": None, "r_precision": None, "notes": []}
    if ref_lengths is not None:
        report["bone_stability"] = {
            "fixed": bone_size_stability(preds, ref_lengths, BoneClass.FIXED, topology),
            "floating": bone_size_stability(preds, ref_lengths, BoneClass.FLOATING, topology),
        }
    if gen_features is not None and real_features is not None:
        report["fmd"] = fmd(gen_features, real_features)
    if text_embeds is not None and motion_embeds is not None:
        report["mm_dist"] = mm_dist(text_embeds, motion_embeds)
        n = len(text_embeds)
        report["r_precision"] = {f"top{k}": (r_precision(text_embeds, motion_embeds, k) if k < n else None)
                                 for k in (1, 2, 3)}
    if report["fmd"] is not None or report["mm_dist"] is not None:
        report["notes"].append(EMBEDDING_NOTE)
    return report
