# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled forward-kinematics kernels. Same contract as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, asin

cnp.import_array()


cdef inline void _axis_rot(double x, double y, double z, double theta, double[3][3] out) noexcept nogil:
    cdef double c = cos(theta)
    cdef double s = sin(theta)
    cdef double C = 1.0 - c
    out[0][0] = c + x * x * C
    out[0][1] = x * y * C - z * s
    out[0][2] = x * z * C + y * s
    out[1][0] = y * x * C + z * s
    out[1][1] = c + y * y * C
    out[1][2] = y * z * C - x * s
    out[2][0] = z * x * C - y * s
    out[2][1] = z * y * C + x * s
    out[2][2] = c + z * z * C


cdef void _fk(const cnp.int64_t[:] parent, const double[:, :, :] off_R, const double[:, :] off_p,
              const double[:, :] axis, const cnp.int64_t[:] dof, const double[:] q,
              double[:, :, :] R, double[:, :] p) noexcept nogil:
    cdef Py_ssize_t n = parent.shape[0]
    cdef Py_ssize_t j, a, b, k
    cdef cnp.int64_t pj, d
    cdef double acc
    cdef double T[3][3]
    cdef double A[3][3]
    for j in range(n):
        pj = parent[j]
        if pj < 0:
            for a in range(3):
                for b in range(3):
                    T[a][b] = off_R[j, a, b]
                p[j, a] = off_p[j, a]
        else:
            for a in range(3):
                acc = p[pj, a]
                for k in range(3):
                    acc = acc + R[pj, a, k] * off_p[j, k]
                p[j, a] = acc
                for b in range(3):
                    acc = 0.0
                    for k in range(3):
                        acc = acc + R[pj, a, k] * off_R[j, k, b]
                    T[a][b] = acc
        d = dof[j]
        if d >= 0:
            _axis_rot(axis[j, 0], axis[j, 1], axis[j, 2], q[d], A)
            for a in range(3):
                for b in range(3):
                    acc = 0.0
                    for k in range(3):
                        acc = acc + T[a][k] * A[k][b]
                    R[j, a, b] = acc
        else:
            for a in range(3):
                for b in range(3):
                    R[j, a, b] = T[a][b]


def fk(parent, off_R, off_p, axis, dof, q):
    n = parent.shape[0]
    R = np.empty((n, 3, 3))
    p = np.empty((n, 3))
    _fk(parent, off_R, off_p, axis, dof, np.ascontiguousarray(q, dtype=np.float64), R, p)
    return R, p


def fd_jacobian(parent, off_R, off_p, axis, dof, q, active, targets, h):
    cdef Py_ssize_t n = parent.shape[0]
    cdef const cnp.int64_t[:] act = active
    cdef const cnp.int64_t[:] tgt = targets
    cdef Py_ssize_t m = act.shape[0]
    cdef Py_ssize_t nt = tgt.shape[0]
    cdef double hh = h
    J_arr = np.zeros((6 * nt, m))
    cdef double[:, :] J = J_arr
    qw_arr = np.array(q, dtype=np.float64)
    cdef double[:] qw = qw_arr
    Rp_arr = np.empty((n, 3, 3))
    pp_arr = np.empty((n, 3))
    Rm_arr = np.empty((n, 3, 3))
    pm_arr = np.empty((n, 3))
    cdef double[:, :, :] Rp = Rp_arr
    cdef double[:, :] pp = pp_arr
    cdef double[:, :, :] Rm = Rm_arr
    cdef double[:, :] pm = pm_arr
    cdef Py_ssize_t c, i, a, k
    cdef cnp.int64_t d, f
    cdef double q0, s, scale
    cdef double M[3][3]
    cdef double v[3]
    for c in range(m):
        d = act[c]
        q0 = qw[d]
        qw[d] = q0 + hh
        _fk(parent, off_R, off_p, axis, dof, qw, Rp, pp)
        qw[d] = q0 - hh
        _fk(parent, off_R, off_p, axis, dof, qw, Rm, pm)
        qw[d] = q0
        for i in range(nt):
            f = tgt[i]
            for a in range(3):
                J[6 * i + a, c] = (pp[f, a] - pm[f, a]) / (2.0 * hh)
            # M = Rp[f] @ Rm[f].T
            for a in range(3):
                for k in range(3):
                    M[a][k] = Rp[f, a, 0] * Rm[f, k, 0] + Rp[f, a, 1] * Rm[f, k, 1] + Rp[f, a, 2] * Rm[f, k, 2]
            v[0] = 0.5 * (M[2][1] - M[1][2])
            v[1] = 0.5 * (M[0][2] - M[2][0])
            v[2] = 0.5 * (M[1][0] - M[0][1])
            s = sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
            scale = 1.0
            if s >= 1e-300:
                scale = asin(s if s < 1.0 else 1.0) / s
            for a in range(3):
                J[6 * i + 3 + a, c] = v[a] * scale / (2.0 * hh)
    return J_arr


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double b1, double b2, double lr_t, double eps_t):
    """Fused in-place Adam moment and parameter update on flat contiguous arrays."""
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double gi
    with nogil:
        for i in range(n):
            gi = g[i]
            m[i] = m[i] * b1 + gi * (1.0 - b1)
            v[i] = v[i] * b2 + (gi * gi) * (1.0 - b2)
            p[i] -= (m[i] / (sqrt(v[i]) + eps_t)) * lr_t
