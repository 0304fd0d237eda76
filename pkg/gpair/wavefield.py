# -*- coding: utf-8 -*-

"""
gpair.wavefield
~~~~~~~~~~~~~~~

Continuous-time pressure of a single Gaussian source and the brute-force
oracle forward model built from it.

Amplitudes follow the closed-form outgoing wave (A / 2r) * d * exp(-d^2 / 2 sigma^2)
with d = r - v t; absolute pressure units are therefore relative.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from gpair.assa import TRUNCATION, make_kernel_taps
from gpair.exceptions import InvalidArgumentError, ResourceLimitError
from gpair.geometry import VoxelImage, build_tof_table, check_no_coincidence
from gpair.operators import SignalSet, forward
from gpair.utils import DENSE_ENTRY_CAP, StageTimer, get_chunks, run_chunked

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaussianSource:
    center: tuple
    amplitude: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidArgumentError(f"sigma must be positive, got {self.sigma}")


def _check_radius(r):
    if np.any(np.asarray(r) <= 0):
        raise InvalidArgumentError(f"distance must be positive, got {r}")


def _scalar_or_array(value, *inputs):
    if all(np.ndim(v) == 0 for v in inputs):
        return float(value)
    return value


def spherical_integral(source, r, r_prime):
    """Integral of the Gaussian over the sphere of radius r_prime around a point at distance r.

    Returns A * 2 pi sigma^2 * (r' / r) * (exp(-(r - r')^2 / 2 sigma^2) - exp(-(r + r')^2 / 2 sigma^2)).
    """
    _check_radius(r)
    r = np.asarray(r, dtype=np.float64)
    r_prime = np.asarray(r_prime, dtype=np.float64)
    if np.any(r_prime < 0):
        raise InvalidArgumentError(f"r_prime must be non-negative, got {r_prime}")
    two_s2 = 2.0 * source.sigma * source.sigma
    value = (source.amplitude * 2.0 * math.pi * source.sigma ** 2 * (r_prime / r)
             * (np.exp(-(r - r_prime) ** 2 / two_s2) - np.exp(-(r + r_prime) ** 2 / two_s2)))
    return _scalar_or_array(value, r, r_prime)


def _n_wave(source, r, d):
    return source.amplitude / (2.0 * r) * d * np.exp(-(d * d) / (2.0 * source.sigma * source.sigma))


def pressure_full(source, r, t, acoustic):
    """Outgoing plus incoming pressure at distance r and time t."""
    _check_radius(r)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise InvalidArgumentError("time must be non-negative")
    value = _n_wave(source, r, r - acoustic.v_s * t) + _n_wave(source, r, r + acoustic.v_s * t)
    return _scalar_or_array(value, r, t)


def pressure_outgoing(source, r, t, acoustic, truncate=True):
    """N-shaped outgoing pressure, exactly 0 outside |d| < 3 sigma when `truncate` is set."""
    _check_radius(r)
    t = np.asarray(t, dtype=np.float64)
    d = r - acoustic.v_s * t
    value = _n_wave(source, r, d)
    if truncate:
        value = np.where(np.abs(d) < TRUNCATION * source.sigma, value, 0.0)
    return _scalar_or_array(value, r, t)


@njit(parallel=True, cache=True)
def _oracle_kernel(voxels, amplitudes, detectors, v_s, dt, t0, sigma, out):
    n_t = out.shape[1]
    window = 3.0 * sigma
    two_s2 = 2.0 * sigma * sigma
    for j in prange(detectors.shape[0]):
        for i in range(voxels.shape[0]):
            a = amplitudes[i]
            if a == 0.0:
                continue
            dx = voxels[i, 0] - detectors[j, 0]
            dy = voxels[i, 1] - detectors[j, 1]
            dz = voxels[i, 2] - detectors[j, 2]
            r = math.sqrt(dx * dx + dy * dy + dz * dz)
            scale = a / (2.0 * r)
            n_lo = max(0, int(math.floor(((r - window) / v_s - t0) / dt)))
            n_hi = min(n_t - 1, int(math.ceil(((r + window) / v_s - t0) / dt)))
            for n in range(n_lo, n_hi + 1):
                t = t0 + n * dt
                d = r - v_s * t
                if abs(d) < window:
                    out[j, n] += scale * d * math.exp(-(d * d) / two_s2)


def _oracle_chunk(args):
    voxels, amplitudes, detectors, v_s, dt, t0, sigma, n_t = args
    out = np.zeros((detectors.shape[0], n_t), dtype=np.float64)
    _oracle_kernel(voxels, amplitudes, detectors, v_s, dt, t0, sigma, out)
    return out


def oracle_forward(image, array, acoustic, sigma, workers=1, chunk_size=None):
    """Direct enumeration of every source-detector pair at every sample, double precision.

    Each trace accumulates its sources sequentially in ascending voxel order, so
    results are bit-reproducible for any `workers`.

    Params
    ------
    - image: VoxelImage
    - array: DetectorArray
    - acoustic: AcousticConfig
    - sigma: float, Gaussian width in meters
    - workers: int, process-pool size; 1 runs in process
    - chunk_size: int, detectors per pooled task

    Returns
    -------
    - SignalSet
    """
    if not sigma > 0:
        raise InvalidArgumentError(f"sigma must be positive, got {sigma}")
    if workers < 1:
        raise InvalidArgumentError(f"workers must be >= 1, got {workers}")
    check_no_coincidence(image.grid, array)

    voxels = image.grid.positions()
    amplitudes = np.ascontiguousarray(image.values, dtype=np.float64)
    args = (voxels, amplitudes, None, float(acoustic.v_s), float(acoustic.dt), float(acoustic.t0),
            float(sigma), acoustic.n_t)

    with StageTimer("oracle_forward", n_detectors=array.n_detectors, workers=workers):
        if workers == 1:
            data = _oracle_chunk(args[:2] + (array.positions,) + args[3:])
        else:
            chunk_size = chunk_size or max(1, -(-array.n_detectors // workers))
            chunks = [args[:2] + (np.ascontiguousarray(block),) + args[3:]
                      for block in get_chunks(array.positions, chunk_size)]
            data = np.concatenate(run_chunked(_oracle_chunk, chunks, workers), axis=0)
    return SignalSet(data, acoustic)


def build_dense_matrix(grid, array, acoustic, assa, sigma=None, cap=DENSE_ENTRY_CAP):
    """Materialize the discrete forward operator as an (N_d * N_t, M) matrix.

    Column i is forward(e_i) flattened detector-major.
    """
    entries = grid.n_voxels * array.n_detectors * acoustic.n_t
    if entries > cap:
        raise ResourceLimitError(f"dense matrix needs {entries} entries, cap is {cap}")
    sigma = grid.spacing if sigma is None else sigma
    tof = build_tof_table(grid, array, acoustic, assa)
    taps = make_kernel_taps(assa, sigma, acoustic)

    matrix = np.zeros((array.n_detectors * acoustic.n_t, grid.n_voxels), dtype=np.float64)
    unit = np.zeros(grid.n_voxels, dtype=np.float64)
    for i in range(grid.n_voxels):
        unit[i] = 1.0
        matrix[:, i] = forward(VoxelImage(grid, unit), tof, taps, assa).data.ravel()
        unit[i] = 0.0
    return matrix
