# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the loops in _accel."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


def holder_sup(double[:, ::1] F, unsigned char[:, ::1] sample,
               long long[:, ::1] offsets, double[::1] weights):
    cdef Py_ssize_t nx = F.shape[0], ny = F.shape[1], nk = offsets.shape[0]
    cdef Py_ssize_t i, j, k, i0, i1, j0, j1, di, dj
    cdef double best = 0.0, v, w
    cdef Py_ssize_t bk = -1, bi = -1, bj = -1
    for k in range(nk):
        di = offsets[k, 0]
        dj = offsets[k, 1]
        w = weights[k]
        i0 = -di if di < 0 else 0
        i1 = nx - di if di > 0 else nx
        j0 = -dj if dj < 0 else 0
        j1 = ny - dj if dj > 0 else ny
        for i in range(i0, i1):
            for j in range(j0, j1):
                if sample[i, j]:
                    v = fabs(F[i + di, j + dj] - F[i, j]) * w
                    if v > best:
                        best = v
                        bk = k
                        bi = i
                        bj = j
    return best, bk, bi, bj


def singular_sum(double[:, ::1] u, long long[:, ::1] offsets, double[::1] weights,
                 unsigned char[:, ::1] sample):
    cdef Py_ssize_t nx = u.shape[0], ny = u.shape[1], nk = offsets.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double acc, base
    out = np.zeros((nx, ny))
    cdef double[:, ::1] o = out
    for i in range(nx):
        for j in range(ny):
            if not sample[i, j]:
                continue
            base = u[i, j]
            acc = 0.0
            for k in range(nk):
                acc += weights[k] * (base - u[i + offsets[k, 0], j + offsets[k, 1]])
            o[i, j] = acc
    return out


def frozen_sum(double[:, ::1] u, double[:, ::1] b11, double[:, ::1] b12, double[:, ::1] b22,
               double[:, ::1] cdet, unsigned char[:, ::1] sample, Py_ssize_t M):
    """Per-node lattice sum  sum_{0<|o|_inf<=M} K_x(o) (u[x] - u[x+o]),
    K_x(o) = cdet[x] * (o.B[x].o)^{-3/2}, u taken as 0 outside the array."""
    cdef Py_ssize_t nx = u.shape[0], ny = u.shape[1]
    cdef Py_ssize_t i, j, p, q, ii, jj
    cdef double acc, base, qf, uo, c, a, b, d
    out = np.zeros((nx, ny))
    cdef double[:, ::1] o = out
    for i in range(nx):
        for j in range(ny):
            if not sample[i, j]:
                continue
            base = u[i, j]
            a = b11[i, j]
            b = b12[i, j]
            d = b22[i, j]
            c = cdet[i, j]
            acc = 0.0
            for p in range(-M, M + 1):
                ii = i + p
                for q in range(-M, M + 1):
                    if p == 0 and q == 0:
                        continue
                    jj = j + q
                    if ii < 0 or ii >= nx or jj < 0 or jj >= ny:
                        uo = 0.0
                    else:
                        uo = u[ii, jj]
                    qf = a * p * p + 2.0 * b * p * q + d * q * q
                    acc += c * (base - uo) / (qf * sqrt(qf))
            o[i, j] = acc
    return out
