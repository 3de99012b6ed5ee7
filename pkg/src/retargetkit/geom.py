"""Quaternion / rigid-transform helpers and the SE(3) target filter.

Quaternions are stored as numpy arrays in (w, x, y, z) order everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])

# below this |<a,b>| gap slerp degenerates to normalized lerp
_SLERP_EPS = 1e-9

DEFAULT_FILTER_ALPHA = 0.6


def _as_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise ValueError(f"quaternion must have 4 components, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("quaternion has non-finite components")
    return q


def quat_normalize(q) -> np.ndarray:
    q = _as_quat(q)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("cannot normalize a zero quaternion")
    return q / n


def quat_canonical(q) -> np.ndarray:
    """Pick the representative with w > 0 (ties: first nonzero component positive)."""
    q = np.asarray(q, dtype=float)
    for c in q:
        if c != 0.0:
            return q if c > 0.0 else -q
    return q


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return np.concatenate(([np.cos(h)], np.sin(h) * axis))


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R) -> np.ndarray:
    """Shepperd's method; returns the w >= 0 representative."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q = q / np.linalg.norm(q)
    return q if q[0] >= 0.0 else -q


def rotvec_from_matrix(R) -> np.ndarray:
    """Axis * angle of a rotation matrix, angle in [0, pi]."""
    q = matrix_to_quat(R)
    s = np.linalg.norm(q[1:])
    if s < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(s, q[0])
    return q[1:] / s * angle


def quat_geodesic_distance(a, b) -> float:
    """Rotation angle between two unit quaternions, in [0, pi]. Sign-invariant."""
    a = _as_quat(a)
    b = _as_quat(b)
    if np.dot(a, b) < 0.0:
        b = -b
    # chord form, exact for a == b and well conditioned for small angles
    return min(4.0 * float(np.arcsin(min(np.linalg.norm(a - b) / 2.0, 1.0))), np.pi)


def slerp(a, b, t: float) -> np.ndarray:
    a = _as_quat(a)
    b = _as_quat(b)
    d = float(np.dot(a, b))
    if d < 0.0:
        b = -b
        d = -d
    if d > 1.0 - _SLERP_EPS:
        return quat_normalize(a + t * (b - a))
    theta = np.arccos(min(d, 1.0))
    s = np.sin(theta)
    q = (np.sin((1.0 - t) * theta) * a + np.sin(t * theta) * b) / s
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class Pose6D:
    """Keypoint position (meters) plus unit orientation quaternion (w, x, y, z)."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(p)):
            raise ValueError("pose position has non-finite components")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", quat_normalize(self.orientation))

    @classmethod
    def identity(cls) -> "Pose6D":
        return cls(np.zeros(3), IDENTITY_QUAT.copy())

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = quat_to_matrix(self.orientation)
        T[:3, 3] = self.position
        return T

    def compose(self, other: "Pose6D") -> "Pose6D":
        R = quat_to_matrix(self.orientation)
        return Pose6D(self.position + R @ other.position, quat_mul(self.orientation, other.orientation))


def se3_interpolate(a: Pose6D, b: Pose6D, t: float) -> Pose6D:
    """Linear in translation, shortest-arc slerp in rotation."""
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"interpolation parameter t={t} outside [0, 1]")
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    p = a.position + t * (b.position - a.position)
    return Pose6D(p, slerp(a.orientation, b.orientation, t))


def se3_filter_step(previous: Pose6D, raw_target: Pose6D, alpha: float = DEFAULT_FILTER_ALPHA) -> Pose6D:
    """One exponential-smoothing step on SE(3); alpha=1 passes the target through."""
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"filter alpha={alpha} outside (0, 1]")
    return se3_interpolate(previous, raw_target, alpha)
