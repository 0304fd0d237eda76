# -*- coding: utf-8 -*-

"""
gpair.phantom
~~~~~~~~~~~~~

Seeded synthetic volumes (blobs, vessel-like tubes, point lattices), MAP and
slice helpers, and noise injection for robustness runs.
"""

from dataclasses import dataclass

import numpy as np

from gpair.cls_def import Axis, PhantomKind
from gpair.exceptions import InvalidArgumentError
from gpair.geometry import VoxelImage
from gpair.operators import SignalSet


@dataclass(frozen=True)
class PhantomSpec:
    """Phantom parameters; lengths in meters, None means a spacing-relative default.

    Params
    ------
    - kind: PhantomKind | str
    - seed: int
    - count: int, blobs or tube branches
    - blob_sigma: float, default 1.5 * spacing
    - tube_width: float, Gaussian cross-section sigma, default 1 * spacing
    - segments: int, segments per tube branch
    - segment_length: float, default a quarter of the inner box
    - pitch: float, point lattice pitch, default 4 * spacing
    - point_sigma: float, default 0.5 * spacing
    - amplitude_range: (float, float), blob amplitudes
    - margin: float, fraction of the extent kept clear at every face
    """
    kind: PhantomKind = PhantomKind.blobs
    seed: int = 0
    count: int = 5
    blob_sigma: float = None
    tube_width: float = None
    segments: int = 4
    segment_length: float = None
    pitch: float = None
    point_sigma: float = None
    amplitude_range: tuple = (0.5, 1.0)
    margin: float = 0.2

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", PhantomKind(self.kind))
        except ValueError:
            raise InvalidArgumentError(f"unknown phantom kind {self.kind!r}")
        if int(self.count) != self.count or self.count < 1:
            raise InvalidArgumentError(f"count must be an integer >= 1, got {self.count}")
        if int(self.segments) != self.segments or self.segments < 1:
            raise InvalidArgumentError(f"segments must be an integer >= 1, got {self.segments}")
        for name in ("blob_sigma", "tube_width", "segment_length", "pitch", "point_sigma"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise InvalidArgumentError(f"{name} must be positive, got {value}")
        lo, hi = self.amplitude_range
        if not 0 < lo <= hi:
            raise InvalidArgumentError(f"amplitude range must satisfy 0 < lo <= hi, got {self.amplitude_range}")
        if not 0 <= self.margin < 0.5:
            raise InvalidArgumentError(f"margin must be in [0, 0.5), got {self.margin}")


def _inner_box(grid, margin):
    lo, hi = grid.extent()
    span = hi - lo
    return lo + margin * span, hi - margin * span


def _gaussian_sum(points, centers, sigmas, amplitudes):
    out = np.zeros(points.shape[0], dtype=np.float64)
    for c, s, a in zip(centers, sigmas, amplitudes):
        diff = points - c
        out += a * np.exp(-np.einsum("ij,ij->i", diff, diff) / (2.0 * s * s))
    return out


def _blobs(spec, grid, rng):
    lo, hi = _inner_box(grid, spec.margin)
    centers = lo + rng.random((spec.count, 3)) * (hi - lo)
    amplitudes = rng.uniform(spec.amplitude_range[0], spec.amplitude_range[1], spec.count)
    sigma = spec.blob_sigma or 1.5 * grid.spacing
    return _gaussian_sum(grid.positions(), centers, [sigma] * spec.count, amplitudes)


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.array([1.0, 0.0, 0.0])


def _segment_distance(points, a, b):
    ab = b - a
    length2 = float(ab @ ab)
    if length2 == 0.0:
        diff = points - a
    else:
        t = np.clip((points - a) @ ab / length2, 0.0, 1.0)
        diff = points - (a + t[:, None] * ab)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def tube_segments(spec, grid, rng):
    """Random-walk polylines; every branch after the first starts on an existing vertex."""
    lo, hi = _inner_box(grid, spec.margin)
    step = spec.segment_length or max(0.25 * float(np.min(hi - lo)), grid.spacing)
    vertices = []
    segments = []
    for branch in range(spec.count):
        if branch == 0:
            p = lo + rng.random(3) * (hi - lo)
        else:
            p = vertices[int(rng.integers(len(vertices)))]
        vertices.append(p)
        direction = _unit(rng.standard_normal(3))
        for _ in range(spec.segments):
            direction = _unit(direction + 0.5 * rng.standard_normal(3))
            q = np.clip(p + step * direction, lo, hi)
            segments.append((p, q))
            vertices.append(q)
            p = q
    return segments


def _tubes(spec, grid, rng):
    points = grid.positions()
    width = spec.tube_width or grid.spacing
    nearest = np.full(points.shape[0], np.inf)
    for a, b in tube_segments(spec, grid, rng):
        nearest = np.minimum(nearest, _segment_distance(points, a, b))
    return np.exp(-(nearest * nearest) / (2.0 * width * width))


def _points(spec, grid):
    lo, hi = _inner_box(grid, spec.margin)
    pitch = spec.pitch or 4.0 * grid.spacing
    sigma = spec.point_sigma or 0.5 * grid.spacing
    mid = 0.5 * (lo + hi)
    axes = []
    for d in range(3):
        n = int(np.floor((hi[d] - lo[d]) / pitch + 1e-9)) + 1
        axes.append(mid[d] + pitch * (np.arange(n) - 0.5 * (n - 1)))
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    centers = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    return _gaussian_sum(grid.positions(), centers, [sigma] * len(centers), np.ones(len(centers)))


def generate_phantom(spec, grid):
    """Deterministic nonnegative phantom for (spec, grid).

    Returns
    -------
    - VoxelImage, float64 values
    """
    if not isinstance(spec, PhantomSpec):
        raise InvalidArgumentError(f"expected a PhantomSpec, got {type(spec).__name__}")
    rng = np.random.default_rng(spec.seed)
    if spec.kind is PhantomKind.blobs:
        values = _blobs(spec, grid, rng)
    elif spec.kind is PhantomKind.tubes:
        values = _tubes(spec, grid, rng)
    else:
        values = _points(spec, grid)
    return VoxelImage(grid, values)


def max_projection(x, axis):
    """Elementwise max along a volume axis; the z-MAP has rows y and columns x."""
    return x.volume.max(axis=Axis.parse(axis).value)


def _check_slice(x, axis, index):
    axis = Axis.parse(axis)
    n = x.volume.shape[axis.value]
    if int(index) != index or not 0 <= index < n:
        raise InvalidArgumentError(f"slice index {index} outside [0, {n}) along {axis}")
    return axis, int(index)


def slice_extract(x, axis, index):
    axis, index = _check_slice(x, axis, index)
    return np.take(x.volume, index, axis=axis.value).copy()


def slice_insert(x, axis, index, plane):
    """Copy of x with one plane replaced."""
    axis, index = _check_slice(x, axis, index)
    volume = x.volume.copy()
    target = [slice(None)] * 3
    target[axis.value] = index
    plane = np.asarray(plane)
    if plane.shape != volume[tuple(target)].shape:
        raise InvalidArgumentError(f"plane shape {plane.shape} != {volume[tuple(target)].shape}")
    volume[tuple(target)] = plane
    return VoxelImage.from_volume(x.grid, volume)


def add_noise(signals, snr, seed=0):
    """Zero-mean Gaussian noise with max|signal| / std = snr."""
    if not snr > 0:
        raise InvalidArgumentError(f"snr must be positive, got {snr}")
    data = signals.data
    peak = float(np.max(np.abs(data))) if data.size else 0.0
    if peak == 0.0:
        return SignalSet(data.copy(), signals.acoustic)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, peak / snr, size=data.shape)
    return SignalSet((data + noise).astype(data.dtype), signals.acoustic)
