# -*- coding: utf-8 -*-

"""
gpair.geometry
~~~~~~~~~~~~~~

Voxel grids, detector arrays and the source-detector time-of-flight table
shared by the forward and adjoint operators.

Linear voxel index convention: i = ix + nx * (iy + ny * iz), x fastest.
A flat value vector reshapes to a (nz, ny, nx) volume.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from gpair.cls_def import AcousticConfig, ArrayLabel
from gpair.exceptions import GeometryConflictError, InvalidArgumentError, ResourceLimitError
from gpair.utils import MAX_TOF_PAIRS, log_kv

logger = logging.getLogger(__name__)

INDEX_LIMIT = np.iinfo(np.int64).max

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def _triple(value, name, cast=float):
    try:
        out = tuple(cast(v) for v in value)
    except TypeError:
        raise InvalidArgumentError(f"{name} must be a triple, got {value!r}")
    if len(out) != 3:
        raise InvalidArgumentError(f"{name} must have 3 components, got {len(out)}")
    return out


@dataclass(frozen=True)
class VoxelGrid:
    """Reconstruction lattice.

    Params
    ------
    - dims: (nx, ny, nz)
    - spacing: float, isotropic voxel pitch in meters
    - origin: (x, y, z) center of voxel (0, 0, 0) in meters
    """
    dims: tuple
    spacing: float
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = _triple(self.dims, "dims", int)
        if min(dims) < 1:
            raise InvalidArgumentError(f"all dims must be >= 1, got {dims}")
        if not self.spacing > 0:
            raise InvalidArgumentError(f"spacing must be positive, got {self.spacing}")
        if dims[0] * dims[1] * dims[2] > INDEX_LIMIT:
            raise ResourceLimitError(f"voxel count of {dims} exceeds the index range")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "origin", _triple(self.origin, "origin"))

    @classmethod
    def centered(cls, dims, spacing):
        """Grid whose voxel centers are symmetric about (0, 0, 0)."""
        dims = _triple(dims, "dims", int)
        origin = tuple(-0.5 * (n - 1) * float(spacing) for n in dims)
        return cls(dims, spacing, origin)

    @property
    def nx(self):
        return self.dims[0]

    @property
    def ny(self):
        return self.dims[1]

    @property
    def nz(self):
        return self.dims[2]

    @property
    def n_voxels(self):
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def shape(self):
        """numpy volume shape, (nz, ny, nx)."""
        return (self.dims[2], self.dims[1], self.dims[0])

    def linear_index(self, ix, iy, iz):
        nx, ny, nz = self.dims
        if not (0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz):
            raise InvalidArgumentError(f"voxel ({ix}, {iy}, {iz}) outside dims {self.dims}")
        return ix + nx * (iy + ny * iz)

    def unravel(self, i):
        if not 0 <= i < self.n_voxels:
            raise InvalidArgumentError(f"linear index {i} outside [0, {self.n_voxels})")
        nx, ny, _ = self.dims
        ix = i % nx
        iy = (i // nx) % ny
        iz = i // (nx * ny)
        return ix, iy, iz

    def position(self, i):
        ix, iy, iz = self.unravel(i)
        return np.array([self.origin[0] + self.spacing * ix,
                         self.origin[1] + self.spacing * iy,
                         self.origin[2] + self.spacing * iz])

    def positions(self):
        """All voxel centers as an (M, 3) array in linear index order."""
        nx, ny, nz = self.dims
        iz, iy, ix = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        pos = np.empty((self.n_voxels, 3), dtype=np.float64)
        pos[:, 0] = self.origin[0] + self.spacing * ix.ravel()
        pos[:, 1] = self.origin[1] + self.spacing * iy.ravel()
        pos[:, 2] = self.origin[2] + self.spacing * iz.ravel()
        return pos

    def extent(self):
        """(lo, hi) corners of the voxel-center bounding box."""
        lo = np.asarray(self.origin, dtype=np.float64)
        hi = lo + self.spacing * (np.asarray(self.dims, dtype=np.float64) - 1.0)
        return lo, hi


@dataclass(frozen=True, eq=False)
class VoxelImage:
    """Amplitudes x_i on a VoxelGrid, stored as a flat vector of length M."""
    grid: VoxelGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 1:
            values = values.reshape(-1)
        if values.shape[0] != self.grid.n_voxels:
            raise InvalidArgumentError(
                f"image has {values.shape[0]} values, grid {self.grid.dims} needs {self.grid.n_voxels}")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid, dtype=np.float64):
        return cls(grid, np.zeros(grid.n_voxels, dtype=dtype))

    @classmethod
    def from_volume(cls, grid, volume):
        volume = np.asarray(volume)
        if volume.shape != grid.shape:
            raise InvalidArgumentError(f"volume shape {volume.shape} does not match grid shape {grid.shape}")
        return cls(grid, np.ascontiguousarray(volume).reshape(-1))

    @property
    def volume(self):
        """(nz, ny, nx) view of the values."""
        return self.values.reshape(self.grid.shape)

    @property
    def dtype(self):
        return self.values.dtype


@dataclass(frozen=True, eq=False)
class DetectorArray:
    """Point detectors s_j as an (N_d, 3) array."""
    positions: np.ndarray
    label: ArrayLabel = ArrayLabel.custom

    def __post_init__(self):
        positions = np.array(self.positions, dtype=np.float64, ndmin=2)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise InvalidArgumentError(f"detector positions must be (N_d, 3), got {positions.shape}")
        if positions.shape[0] < 1:
            raise InvalidArgumentError("a detector array needs at least one detector")
        if not np.all(np.isfinite(positions)):
            raise InvalidArgumentError("detector positions must be finite")
        if np.unique(positions, axis=0).shape[0] != positions.shape[0]:
            raise InvalidArgumentError("detector positions must be pairwise distinct")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "label", ArrayLabel(self.label))

    @property
    def n_detectors(self):
        return self.positions.shape[0]


def build_planar_array(aperture_x, aperture_y, n_per_side, plane_z):
    """Regular n_per_side x n_per_side lattice centered on (0, 0, plane_z), x fastest.

    Params
    ------
    - aperture_x, aperture_y: float, lattice extent in meters
    - n_per_side: int, detectors per side
    - plane_z: float, plane height in meters

    Returns
    -------
    - DetectorArray
    """
    if not (aperture_x > 0 and aperture_y > 0):
        raise InvalidArgumentError(f"aperture must be positive, got ({aperture_x}, {aperture_y})")
    if int(n_per_side) != n_per_side or n_per_side < 1:
        raise InvalidArgumentError(f"n_per_side must be an integer >= 1, got {n_per_side}")
    n = int(n_per_side)
    if n == 1:
        xs = np.zeros(1)
        ys = np.zeros(1)
    else:
        xs = np.linspace(-0.5 * aperture_x, 0.5 * aperture_x, n)
        ys = np.linspace(-0.5 * aperture_y, 0.5 * aperture_y, n)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    positions = np.column_stack([gx.ravel(), gy.ravel(), np.full(n * n, float(plane_z))])
    return DetectorArray(positions, ArrayLabel.planar)


def build_hemispherical_array(radius, center, n):
    """Fibonacci spiral on the lower hemisphere; k = 0 sits at the pole.

    The cos-polar coordinate h_k = -1 + k / n keeps every point at or below
    the center height and makes all z values, hence all points, distinct.
    """
    if not radius > 0:
        raise InvalidArgumentError(f"radius must be positive, got {radius}")
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"detector count must be an integer >= 1, got {n}")
    n = int(n)
    center = np.asarray(_triple(center, "center"))
    k = np.arange(n, dtype=np.float64)
    h = -1.0 + k / n
    rho = np.sqrt(np.maximum(0.0, 1.0 - h * h))
    phi = GOLDEN_ANGLE * k
    unit = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), h])
    return DetectorArray(center + radius * unit, ArrayLabel.hemispherical)


def aligned_index(distance, v_s, f_s_up, t0=0.0):
    """Nearest upsampled-clock index of the arrival time, round half up.

    k = floor((r / v_s - t0) * f_s_up + 0.5); with t0 = 0 this is
    floor(r / v_s * f_s_up + 0.5).
    """
    distance = np.asarray(distance, dtype=np.float64)
    if t0 == 0.0:
        return np.floor(distance / v_s * f_s_up + 0.5)
    return np.floor((distance / v_s - t0) * f_s_up + 0.5)


def check_no_coincidence(grid, array, distances=None):
    """Raise GeometryConflictError naming the first (voxel, detector) pair with r = 0."""
    if distances is None:
        distances = _distances(grid, array)
    hits = np.argwhere(distances == 0.0)
    if hits.size:
        j, i = (int(v) for v in hits[0])
        raise GeometryConflictError("detector coincides with a voxel center", voxel=i, detector=j)


def _distances(grid, array):
    voxels = grid.positions()
    out = np.empty((array.n_detectors, grid.n_voxels), dtype=np.float64)
    for j, s in enumerate(array.positions):
        diff = voxels - s
        out[j] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return out


@dataclass(frozen=True, eq=False)
class ToFTable:
    """Per-pair distances and aligned indices, detector-major (N_d, M) layout.

    `inv_distances` holds 1 / r_ij for valid pairs and exactly 0 for masked
    pairs, so both operators skip masked pairs by testing the weight.
    """
    distances: np.ndarray
    aligned_indices: np.ndarray
    valid_mask: np.ndarray
    n_t_up: int
    kernel_half_width: int
    acoustic: AcousticConfig = None
    inv_distances: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.inv_distances is None:
            inv = np.zeros_like(self.distances)
            np.divide(1.0, self.distances, out=inv, where=self.valid_mask)
            object.__setattr__(self, "inv_distances", inv)

    @property
    def n_detectors(self):
        return self.distances.shape[0]

    @property
    def n_voxels(self):
        return self.distances.shape[1]

    @property
    def n_valid(self):
        return int(np.count_nonzero(self.valid_mask))


def build_tof_table(grid, array, acq, assa, max_pairs=MAX_TOF_PAIRS):
    """Precompute r_ij and k_ij for every voxel-detector pair.

    Pairs whose kernel window [k_ij - K, k_ij + K] leaves [0, N_t_up) are
    masked invalid.

    Params
    ------
    - grid: VoxelGrid
    - array: DetectorArray
    - acq: AcousticConfig, the clock assa was computed from
    - assa: AssaParams
    - max_pairs: int, cap on M * N_d

    Returns
    -------
    - ToFTable
    """
    if not isinstance(acq, AcousticConfig):
        raise InvalidArgumentError(f"expected an AcousticConfig, got {type(acq).__name__}")
    if assa.n_t_up != assa.alpha * acq.n_t:
        raise InvalidArgumentError(
            f"AssaParams n_t_up={assa.n_t_up} was not built for n_t={acq.n_t} (alpha={assa.alpha})")
    if assa.n_t_up >= 2 ** 31:
        raise ResourceLimitError(f"upsampled record length {assa.n_t_up} does not fit 32-bit indices")
    n_pairs = grid.n_voxels * array.n_detectors
    if n_pairs > max_pairs:
        raise ResourceLimitError(
            f"ToF table needs {n_pairs} pairs, cap is {max_pairs}; shrink the grid or the array")

    distances = _distances(grid, array)
    check_no_coincidence(grid, array, distances)
    k = aligned_index(distances, acq.v_s, assa.f_s_up, acq.t0)
    valid = (k - assa.K >= 0) & (k + assa.K < assa.n_t_up)
    aligned = np.clip(k, -1, assa.n_t_up).astype(np.int32)

    table = ToFTable(distances, aligned, valid, assa.n_t_up, assa.K, acq)
    log_kv("tof_table", level=logging.DEBUG, n_detectors=array.n_detectors, n_voxels=grid.n_voxels,
           n_valid=table.n_valid, n_masked=n_pairs - table.n_valid)
    return table
