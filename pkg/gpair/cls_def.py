# -*- coding: utf-8 -*-

"""
gpair.cls_def
~~~~~~~~~~~~~

Enumerations and small value classes shared across the gpair modules.
"""

from dataclasses import dataclass
from enum import Enum, unique

import numpy as np

from gpair.exceptions import InvalidArgumentError


@unique
class Precision(Enum):
    """Enum class for the floating-point precision of the operator pipeline.

    Precision
    ---------
    - single: 32-bit reals, the CLI default for speed.
    - double: 64-bit reals, used by every test.
    """
    single = "single"
    double = "double"

    def __str__(self):
        return f"{self.name.lower()}"

    @property
    def dtype(self):
        return np.dtype(np.float32) if self is Precision.single else np.dtype(np.float64)

    @classmethod
    def from_dtype(cls, dtype):
        return cls.single if np.dtype(dtype) == np.float32 else cls.double


@unique
class ArrayLabel(Enum):
    """Enum class for detector array geometry tags."""
    planar = "planar"
    hemispherical = "hemispherical"
    custom = "custom"

    def __str__(self):
        return f"{self.name.lower()}"


@unique
class PhantomKind(Enum):
    """Enum class for the synthetic phantom families.

    Kind
    ----
    - blobs: isotropic Gaussian blobs at seeded locations.
    - tubes: connected piecewise-linear tubes with Gaussian cross-section.
    - grid_of_points: a regular lattice of point-like Gaussians.
    """
    blobs = "blobs"
    tubes = "tubes"
    grid_of_points = "grid-of-points"

    def __str__(self):
        return self.value


@unique
class Axis(Enum):
    """Enum class for volume axes; the value is the numpy axis of a (nz, ny, nx) volume."""
    x = 2
    y = 1
    z = 0

    def __str__(self):
        return f"{self.name.lower()}"

    @classmethod
    def parse(cls, axis):
        if isinstance(axis, Axis):
            return axis
        try:
            return cls[str(axis).lower()]
        except KeyError:
            raise InvalidArgumentError(f"unknown axis {axis!r}, expected one of x, y, z")


@dataclass(frozen=True)
class AcousticConfig:
    """Acquisition clock and medium.

    Params
    ------
    - v_s: float, speed of sound in m/s
    - f_s: float, sampling frequency in Hz
    - n_t: int, samples per trace
    - t0: float, time of the first sample in seconds
    """
    v_s: float = 1500.0
    f_s: float = 20e6
    n_t: int = 512
    t0: float = 0.0

    def __post_init__(self):
        if not self.v_s > 0:
            raise InvalidArgumentError(f"speed of sound must be positive, got {self.v_s}")
        if not self.f_s > 0:
            raise InvalidArgumentError(f"sampling frequency must be positive, got {self.f_s}")
        if int(self.n_t) != self.n_t or self.n_t < 1:
            raise InvalidArgumentError(f"samples per trace must be an integer >= 1, got {self.n_t}")
        object.__setattr__(self, "n_t", int(self.n_t))

    @property
    def dt(self):
        return 1.0 / self.f_s

    def sample_times(self):
        return self.t0 + np.arange(self.n_t, dtype=np.float64) * self.dt


AcquisitionConfig = AcousticConfig
