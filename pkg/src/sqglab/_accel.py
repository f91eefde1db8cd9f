"""Hot loops with a compiled implementation and a numpy fallback.

The compiled module ``_ckernels`` is optional. ``BACKEND`` names the one in use;
setting SQGLAB_PURE=1 forces the fallback.
"""
from __future__ import annotations

import os

import numpy as np

try:
    if os.environ.get("SQGLAB_PURE"):
        raise ImportError
    from . import _ckernels as _ck
    BACKEND = "cython"
except ImportError:  # pragma: no cover - depends on the build
    _ck = None
    BACKEND = "python"


def holder_sup_py(F, sample, offsets, weights):
    """max over sample nodes x and offsets k of |F[x+o_k] - F[x]| * weights[k].

    F must be padded so that x + o_k stays inside the array for every sample x.
    Returns (value, k, i, j) with (i, j) the sample node of the maximum.
    """
    best = 0.0
    arg = (-1, -1, -1)
    nx, ny = F.shape
    for k, (di, dj) in enumerate(offsets):
        di, dj = int(di), int(dj)
        A = F[max(0, -di):nx - max(0, di), max(0, -dj):ny - max(0, dj)]
        B = F[max(0, di):nx - max(0, -di), max(0, dj):ny - max(0, -dj)]
        S = sample[max(0, -di):nx - max(0, di), max(0, -dj):ny - max(0, dj)]
        D = np.where(S, np.abs(B - A), 0.0)
        idx = int(np.argmax(D))
        v = D.flat[idx] * weights[k]
        if v > best:
            i, j = np.unravel_index(idx, D.shape)
            best = float(v)
            arg = (k, int(i) + max(0, -di), int(j) + max(0, -dj))
    return (best,) + arg


def holder_sup(F, sample, offsets, weights):
    F = np.ascontiguousarray(F, dtype=float)
    sample = np.ascontiguousarray(sample, dtype=np.uint8)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    weights = np.ascontiguousarray(weights, dtype=float)
    if _ck is not None:
        return _ck.holder_sup(F, sample, offsets, weights)
    return holder_sup_py(F, sample.astype(bool), offsets, weights)


def singular_sum_py(u, offsets, weights, sample):
    """out[x] = sum_k weights[k] * (u[x] - u[x + o_k]) over sample nodes (zero elsewhere).

    ``u`` must be padded so every x + o_k is inside the array.
    """
    nx, ny = u.shape
    out = np.zeros_like(u)
    I, J = np.nonzero(sample)
    base = u[I, J]
    acc = np.zeros(I.size)
    for k, (di, dj) in enumerate(offsets):
        acc += weights[k] * (base - u[I + int(di), J + int(dj)])
    out[I, J] = acc
    return out


def singular_sum(u, offsets, weights, sample):
    u = np.ascontiguousarray(u, dtype=float)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    weights = np.ascontiguousarray(weights, dtype=float)
    sample = np.ascontiguousarray(sample, dtype=np.uint8)
    if _ck is not None:
        return _ck.singular_sum(u, offsets, weights, sample)
    return singular_sum_py(u, offsets, weights, sample.astype(bool))


def frozen_sum_py(u, b11, b12, b22, cdet, sample, M):
    nx, ny = u.shape
    I, J = np.nonzero(sample)
    P = np.pad(u, M)
    base = u[I, J]
    a, b, d, c = b11[I, J], b12[I, J], b22[I, J], cdet[I, J]
    acc = np.zeros(I.size)
    for p in range(-M, M + 1):
        for q in range(-M, M + 1):
            if p == 0 and q == 0:
                continue
            qf = a * p * p + 2 * b * p * q + d * q * q
            acc += c * (base - P[I + M + p, J + M + q]) / (qf * np.sqrt(qf))
    out = np.zeros_like(u)
    out[I, J] = acc
    return out


def frozen_sum(u, b11, b12, b22, cdet, sample, M):
    """Per-node anisotropic lattice sum used by the frozen-coefficient square root."""
    args = [np.ascontiguousarray(a, dtype=float) for a in (u, b11, b12, b22, cdet)]
    sample = np.ascontiguousarray(sample, dtype=np.uint8)
    if _ck is not None:
        return _ck.frozen_sum(*args, sample, int(M))
    return frozen_sum_py(*args, sample.astype(bool), int(M))
