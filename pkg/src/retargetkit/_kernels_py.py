"""Pure numpy forward-kinematics kernels.

Mirror of ``_kernels.pyx``; used when the compiled module is unavailable.
Array layout (n frames, topologically ordered, parents before children):

    parent   int64 (n,)      index of parent frame, -1 for the root
    off_R    float64 (n,3,3) fixed offset rotation
    off_p    float64 (n,3)   fixed offset translation
    axis     float64 (n,3)   unit rotation axis (ignored for fixed frames)
    dof      int64 (n,)      index into q, -1 for fixed frames
"""
import math

import numpy as np


def _axis_rotation(a, theta):
    x, y, z = a
    c = math.cos(theta)
    s = math.sin(theta)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def fk(parent, off_R, off_p, axis, dof, q):
    n = parent.shape[0]
    R = np.empty((n, 3, 3))
    p = np.empty((n, 3))
    for j in range(n):
        pj = parent[j]
        if pj < 0:
            Rj = off_R[j].copy()
            tj = off_p[j].copy()
        else:
            Rj = R[pj] @ off_R[j]
            tj = p[pj] + R[pj] @ off_p[j]
        d = dof[j]
        if d >= 0:
            Rj = Rj @ _axis_rotation(axis[j], q[d])
        R[j] = Rj
        p[j] = tj
    return R, p


def _small_rotvec(M):
    v = 0.5 * np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    s = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if s < 1e-300:
        return v
    return v * (math.asin(min(s, 1.0)) / s)


def fd_jacobian(parent, off_R, off_p, axis, dof, q, active, targets, h):
    """Central-difference geometric Jacobian, rows [dp(3), dw(3)] per target frame."""
    m = active.shape[0]
    nt = targets.shape[0]
    J = np.zeros((6 * nt, m))
    qw = np.array(q, dtype=float)
    for c in range(m):
        d = active[c]
        q0 = qw[d]
        qw[d] = q0 + h
        Rp, pp = fk(parent, off_R, off_p, axis, dof, qw)
        qw[d] = q0 - h
        Rm, pm = fk(parent, off_R, off_p, axis, dof, qw)
        qw[d] = q0
        for i in range(nt):
            f = targets[i]
            J[6 * i:6 * i + 3, c] = (pp[f] - pm[f]) / (2.0 * h)
            J[6 * i + 3:6 * i + 6, c] = _small_rotvec(Rp[f] @ Rm[f].T) / (2.0 * h)
    return J


def adam_update(p, g, m, v, b1, b2, lr_t, eps_t):
    """In-place Adam update; bias corrections are already folded into lr_t and eps_t."""
    m *= b1
    m += g * (1.0 - b1)
    v *= b2
    v += (g * g) * (1.0 - b2)
    p -= (m / (np.sqrt(v) + eps_t)) * lr_t
