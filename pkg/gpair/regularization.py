# -*- coding: utf-8 -*-

"""
gpair.regularization
~~~~~~~~~~~~~~~~~~~~

Smoothed total variation and Hessian-Frobenius penalties with analytic
gradients, and their vessel-continuity combination R_H + beta * R_TV.

Every difference operator is zero wherever its stencil would leave the
volume: forward differences at the last index, [1, -2, 1] at the first and
last index, forward-forward cross differences at the last index of either
axis. Affine images therefore have an exactly zero Hessian.
"""

from dataclasses import dataclass

import numpy as np

from gpair.exceptions import InvalidArgumentError
from gpair.geometry import VoxelImage

VOLUME_AXES = (0, 1, 2)

CROSS_PAIRS = ((0, 1), (0, 2), (1, 2))


@dataclass(frozen=True)
class RegConfig:
    """lam: global weight; beta: TV weight inside VCR; eps_reg: smoothing constant."""
    lam: float = 0.0
    beta: float = 0.0
    eps_reg: float = 1e-8

    def __post_init__(self):
        if self.lam < 0 or self.beta < 0:
            raise InvalidArgumentError(f"lambda and beta must be non-negative, got ({self.lam}, {self.beta})")
        if not self.eps_reg > 0:
            raise InvalidArgumentError(f"eps_reg must be positive, got {self.eps_reg}")


def _at(ndim, mapping):
    idx = [slice(None)] * ndim
    for axis, sl in mapping.items():
        idx[axis] = sl
    return tuple(idx)


HEAD = slice(None, -1)
TAIL = slice(1, None)
INNER = slice(1, -1)
LEFT = slice(None, -2)
RIGHT = slice(2, None)


def forward_difference(vol, axis):
    out = np.zeros_like(vol)
    if vol.shape[axis] > 1:
        out[_at(vol.ndim, {axis: HEAD})] = np.diff(vol, axis=axis)
    return out


def forward_difference_adjoint(u, axis):
    adj = np.zeros_like(u)
    if u.shape[axis] > 1:
        v = u[_at(u.ndim, {axis: HEAD})]
        adj[_at(u.ndim, {axis: HEAD})] -= v
        adj[_at(u.ndim, {axis: TAIL})] += v
    return adj


def second_difference(vol, axis):
    out = np.zeros_like(vol)
    if vol.shape[axis] > 2:
        nd = vol.ndim
        out[_at(nd, {axis: INNER})] = (vol[_at(nd, {axis: RIGHT})] - 2.0 * vol[_at(nd, {axis: INNER})]
                                        + vol[_at(nd, {axis: LEFT})])
    return out


def second_difference_adjoint(u, axis):
    adj = np.zeros_like(u)
    if u.shape[axis] > 2:
        nd = u.ndim
        v = u[_at(nd, {axis: INNER})]
        adj[_at(nd, {axis: RIGHT})] += v
        adj[_at(nd, {axis: INNER})] -= 2.0 * v
        adj[_at(nd, {axis: LEFT})] += v
    return adj


def cross_difference(vol, a, b):
    """x(i + e_a + e_b) - x(i + e_a) - x(i + e_b) + x(i)."""
    out = np.zeros_like(vol)
    if vol.shape[a] > 1 and vol.shape[b] > 1:
        nd = vol.ndim
        out[_at(nd, {a: HEAD, b: HEAD})] = (vol[_at(nd, {a: TAIL, b: TAIL})] - vol[_at(nd, {a: TAIL, b: HEAD})]
                                             - vol[_at(nd, {a: HEAD, b: TAIL})] + vol[_at(nd, {a: HEAD, b: HEAD})])
    return out


def cross_difference_adjoint(u, a, b):
    adj = np.zeros_like(u)
    if u.shape[a] > 1 and u.shape[b] > 1:
        nd = u.ndim
        v = u[_at(nd, {a: HEAD, b: HEAD})]
        adj[_at(nd, {a: TAIL, b: TAIL})] += v
        adj[_at(nd, {a: TAIL, b: HEAD})] -= v
        adj[_at(nd, {a: HEAD, b: TAIL})] -= v
        adj[_at(nd, {a: HEAD, b: HEAD})] += v
    return adj


def _volume(image):
    vol = image.volume
    if vol.dtype not in (np.float32, np.float64):
        vol = vol.astype(np.float64)
    return vol


def _check_eps(eps_reg):
    if not eps_reg > 0:
        raise InvalidArgumentError(f"eps_reg must be positive, got {eps_reg}")


def tv_value_grad(image, eps_reg):
    """sum_i sqrt(sum_d (D_d x)_i^2 + eps) and its gradient.

    Returns
    -------
    - (float, VoxelImage)
    """
    _check_eps(eps_reg)
    vol = _volume(image)
    diffs = [forward_difference(vol, axis) for axis in VOLUME_AXES]
    norm = np.sqrt(sum(d * d for d in diffs) + eps_reg)
    grad = sum(forward_difference_adjoint(d / norm, axis) for d, axis in zip(diffs, VOLUME_AXES))
    return float(norm.sum()), VoxelImage.from_volume(image.grid, grad)


def _hessian_terms(vol):
    for axis in VOLUME_AXES:
        yield 1.0, second_difference(vol, axis), (lambda u, axis=axis: second_difference_adjoint(u, axis))
    for a, b in CROSS_PAIRS:
        # xy and yx both enter the Frobenius sum
        yield 2.0, cross_difference(vol, a, b), (lambda u, a=a, b=b: cross_difference_adjoint(u, a, b))


def hessian_value_grad(image, eps_reg):
    """sum_i sqrt(sum_{p,q} (D_pq x)_i^2 + eps) and its gradient.

    Returns
    -------
    - (float, VoxelImage)
    """
    _check_eps(eps_reg)
    vol = _volume(image)
    terms = list(_hessian_terms(vol))
    norm = np.sqrt(sum(w * d * d for w, d, _ in terms) + eps_reg)
    grad = sum(w * adj(d / norm) for w, d, adj in terms)
    return float(norm.sum()), VoxelImage.from_volume(image.grid, grad)


def vcr_value_grad(image, cfg):
    """R_H + beta * R_TV; lambda is applied by the caller."""
    h_value, h_grad = hessian_value_grad(image, cfg.eps_reg)
    if cfg.beta == 0:
        return h_value, h_grad
    tv_value, tv_grad = tv_value_grad(image, cfg.eps_reg)
    return h_value + cfg.beta * tv_value, VoxelImage(image.grid, h_grad.values + cfg.beta * tv_grad.values)
