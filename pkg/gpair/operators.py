# -*- coding: utf-8 -*-

"""
gpair.operators
~~~~~~~~~~~~~~~

The discrete forward operator A = decimate . (h *) . project_up and its
exact transpose A^T = backproject . (h correlate) . zero_fill.

Forward work is owned per detector trace, adjoint work per voxel; see
gpair.kernels.
"""

import logging
from dataclasses import dataclass

import numpy as np

from gpair.assa import compute_assa, make_kernel_taps
from gpair.cls_def import AcousticConfig
from gpair.exceptions import InvalidArgumentError
from gpair.geometry import VoxelImage, build_tof_table
from gpair.kernels import get_kernels
from gpair.utils import DEFAULT_N_MIN, MAX_TOF_PAIRS, RUNTIME, StageTimer

logger = logging.getLogger(__name__)


def _real_dtype(array):
    return np.float32 if array.dtype == np.float32 else np.float64


@dataclass(frozen=True, eq=False)
class SignalSet:
    """Detector-major (N_d, N_t) traces: simulated y, observed b or residual."""
    data: np.ndarray
    acoustic: AcousticConfig = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise InvalidArgumentError(f"signals must be (N_d, N_t), got shape {data.shape}")
        if self.acoustic is not None and data.shape[1] != self.acoustic.n_t:
            raise InvalidArgumentError(f"signals have {data.shape[1]} samples, acoustic config says {self.acoustic.n_t}")
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("signals contain non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def n_detectors(self):
        return self.data.shape[0]

    @property
    def n_t(self):
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class UpsampledBuffer:
    """(N_d, N_t_up) traces on the upsampled clock."""
    data: np.ndarray
    acoustic: AcousticConfig = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise InvalidArgumentError(f"buffer must be (N_d, N_t_up), got shape {data.shape}")
        object.__setattr__(self, "data", data)


def project_up(image, tof):
    """buffer[j, k] = sum of x_i / r_ij over valid pairs with k_ij = k."""
    if image.grid.n_voxels != tof.n_voxels:
        raise InvalidArgumentError(f"image has {image.grid.n_voxels} voxels, ToF table {tof.n_voxels}")
    values = np.ascontiguousarray(image.values, dtype=_real_dtype(image.values))
    out = np.zeros((tof.n_detectors, tof.n_t_up), dtype=values.dtype)
    kernel, _, _ = get_kernels(RUNTIME.deterministic)
    with StageTimer("project_up", level=logging.DEBUG):
        kernel(values, tof.inv_distances, tof.aligned_indices, out)
    return UpsampledBuffer(out, tof.acoustic)


def scatter_convolve(buffer, taps):
    """z~[k] = sum_m z[m] h[k - m]; indices outside the record are dropped."""
    data = np.ascontiguousarray(buffer.data, dtype=_real_dtype(buffer.data))
    out = np.zeros_like(data)
    _, kernel, _ = get_kernels(RUNTIME.deterministic)
    with StageTimer("scatter_convolve", level=logging.DEBUG):
        kernel(data, np.ascontiguousarray(taps.taps), out)
    return UpsampledBuffer(out, buffer.acoustic)


def decimate(buffer, assa):
    """y[n] = z~[alpha * n], a strided pick."""
    n_up = buffer.data.shape[1]
    if n_up % assa.alpha:
        raise InvalidArgumentError(f"buffer length {n_up} is not a multiple of alpha={assa.alpha}")
    if buffer.acoustic is not None and n_up != assa.alpha * buffer.acoustic.n_t:
        raise InvalidArgumentError(f"buffer length {n_up} != alpha * N_t = {assa.alpha * buffer.acoustic.n_t}")
    return SignalSet(np.ascontiguousarray(buffer.data[:, ::assa.alpha]), buffer.acoustic)


def forward(image, tof, taps, assa):
    """Discrete forward operator applied to an image.

    Params
    ------
    - image: VoxelImage
    - tof: ToFTable
    - taps: KernelTaps
    - assa: AssaParams

    Returns
    -------
    - SignalSet
    """
    return decimate(scatter_convolve(project_up(image, tof), taps), assa)


def zero_fill(signals, assa):
    """delta_up[alpha * n] = delta[n], zero elsewhere."""
    data = signals.data
    out = np.zeros((data.shape[0], assa.alpha * data.shape[1]), dtype=_real_dtype(data))
    out[:, ::assa.alpha] = data
    return UpsampledBuffer(out, signals.acoustic)


def correlate(buffer, taps):
    """delta_conv[k] = sum_m h[m - k] delta_up[m]: scatter with the time-reversed kernel."""
    return scatter_convolve(buffer, taps.reversed())


def backproject(buffer, tof, grid):
    """g_i = sum_j buffer[j, k_ij] / r_ij over valid pairs."""
    if grid.n_voxels != tof.n_voxels:
        raise InvalidArgumentError(f"grid has {grid.n_voxels} voxels, ToF table {tof.n_voxels}")
    if buffer.data.shape != (tof.n_detectors, tof.n_t_up):
        raise InvalidArgumentError(
            f"buffer shape {buffer.data.shape} != ({tof.n_detectors}, {tof.n_t_up}) of the ToF table")
    data = np.ascontiguousarray(buffer.data, dtype=_real_dtype(buffer.data))
    out = np.zeros(grid.n_voxels, dtype=data.dtype)
    _, _, kernel = get_kernels(RUNTIME.deterministic)
    with StageTimer("backproject", level=logging.DEBUG):
        kernel(data, tof.inv_distances, tof.aligned_indices, out)
    return VoxelImage(grid, out)


def adjoint(residual, tof, taps, assa, grid):
    """Exact transpose of `forward`: <forward(x), d> = <x, adjoint(d)>."""
    return backproject(correlate(zero_fill(residual, assa), taps), tof, grid)


@dataclass(frozen=True)
class DotTestReport:
    discrepancies: tuple
    seed: int

    @property
    def max_discrepancy(self):
        return max(self.discrepancies)


def relative_dot_gap(ax, delta, x, atd):
    """|<Ax, d> - <x, A^T d>| / (||Ax|| ||d||), 0 when both sides vanish."""
    lhs = float(np.dot(np.ravel(ax).astype(np.float64), np.ravel(delta).astype(np.float64)))
    rhs = float(np.dot(np.ravel(x).astype(np.float64), np.ravel(atd).astype(np.float64)))
    scale = float(np.linalg.norm(ax)) * float(np.linalg.norm(delta))
    if scale == 0.0:
        return 0.0 if lhs == rhs else float("inf")
    return abs(lhs - rhs) / scale


def adjoint_dot_test(grid, array, acoustic, assa, trials, seed, sigma=None, dtype=np.float64):
    """Dot test of forward/adjoint on random x and delta.

    Returns
    -------
    - DotTestReport, per-trial relative discrepancies; deterministic given seed
    """
    if int(trials) != trials or trials < 1:
        raise InvalidArgumentError(f"trials must be an integer >= 1, got {trials}")
    sigma = grid.spacing if sigma is None else sigma
    tof = build_tof_table(grid, array, acoustic, assa)
    taps = make_kernel_taps(assa, sigma, acoustic)
    rng = np.random.default_rng(seed)

    gaps = []
    for _ in range(int(trials)):
        x = rng.standard_normal(grid.n_voxels).astype(dtype)
        delta = rng.standard_normal((array.n_detectors, acoustic.n_t)).astype(dtype)
        ax = forward(VoxelImage(grid, x), tof, taps, assa).data
        atd = adjoint(SignalSet(delta, acoustic), tof, taps, assa, grid).values
        gaps.append(relative_dot_gap(ax, delta, x, atd))
    return DotTestReport(tuple(gaps), seed)


class SystemModel:
    """Precomputed operator context: ASSA parameters, ToF table and kernel taps.

    Params
    ------
    - grid: VoxelGrid
    - array: DetectorArray
    - acoustic: AcousticConfig
    - sigma: float, Gaussian width; defaults to the grid spacing
    - n_min: int, ASSA tick threshold
    - alpha_scale: int, multiplier on the adaptive ratio
    """

    def __init__(self, grid, array, acoustic, sigma=None, n_min=DEFAULT_N_MIN, alpha_scale=1,
                 max_pairs=MAX_TOF_PAIRS):
        self.__grid = grid
        self.__array = array
        self.__acoustic = acoustic
        self.__sigma = float(grid.spacing if sigma is None else sigma)
        self.__assa = compute_assa(self.__sigma, acoustic, n_min, alpha_scale)
        with StageTimer("tof_table", level=logging.DEBUG):
            self.__tof = build_tof_table(grid, array, acoustic, self.__assa, max_pairs)
        self.__taps = make_kernel_taps(self.__assa, self.__sigma, acoustic)

    @property
    def grid(self):
        return self.__grid

    @property
    def array(self):
        return self.__array

    @property
    def acoustic(self):
        return self.__acoustic

    @property
    def sigma(self):
        return self.__sigma

    @property
    def assa(self):
        return self.__assa

    @property
    def tof(self):
        return self.__tof

    @property
    def taps(self):
        return self.__taps

    @property
    def n_samples(self):
        return self.__array.n_detectors * self.__acoustic.n_t

    def forward(self, x):
        """Raw-array forward: (M,) -> (N_d, N_t)."""
        buffer = scatter_convolve(project_up(VoxelImage(self.__grid, x), self.__tof), self.__taps)
        return np.ascontiguousarray(buffer.data[:, ::self.__assa.alpha])

    def adjoint(self, residual):
        """Raw-array adjoint: (N_d, N_t) -> (M,)."""
        data = np.asarray(residual)
        up = np.zeros((data.shape[0], self.__assa.n_t_up), dtype=_real_dtype(data))
        up[:, ::self.__assa.alpha] = data
        buffer = correlate(UpsampledBuffer(up, self.__acoustic), self.__taps)
        return backproject(buffer, self.__tof, self.__grid).values

    def forward_image(self, image):
        return forward(image, self.__tof, self.__taps, self.__assa)

    def adjoint_signals(self, signals):
        return adjoint(signals, self.__tof, self.__taps, self.__assa, self.__grid)
