# -*- coding: utf-8 -*-

"""
gpair.kernels
~~~~~~~~~~~~~

Data-parallel CPU kernels behind the operator stages.

Every kernel owns its output rows (per detector) or entries (per voxel) and
accumulates them sequentially, so results do not depend on thread count.
Two builds exist: a deterministic one and a fastmath one.
"""

from numba import njit, prange


def _project_up(x, inv_r, k_idx, out):
    n_d, m = inv_r.shape
    for j in prange(n_d):
        for i in range(m):
            w = inv_r[j, i]
            if w != 0.0:
                out[j, k_idx[j, i]] += x[i] * w


def _scatter(z, taps, out):
    n_d, n = z.shape
    half = (taps.shape[0] - 1) // 2
    for j in prange(n_d):
        for m in range(n):
            a = z[j, m]
            if a != 0.0:
                lo = max(0, m - half)
                hi = min(n, m + half + 1)
                for k in range(lo, hi):
                    out[j, k] += a * taps[k - m + half]


def _backproject(buf, inv_r, k_idx, out):
    n_d, m = inv_r.shape
    for i in prange(m):
        for j in range(n_d):
            w = inv_r[j, i]
            if w != 0.0:
                out[i] += buf[j, k_idx[j, i]] * w


_BUILDS = {}


def get_kernels(deterministic=True):
    """Return (project_up, scatter, backproject), compiled on first use."""
    key = bool(deterministic)
    if key not in _BUILDS:
        jit = njit(parallel=True, fastmath=not key)
        _BUILDS[key] = (jit(_project_up), jit(_scatter), jit(_backproject))
    return _BUILDS[key]
