# -*- coding: utf-8 -*-

"""
gpair
~~~~~

Gaussian-kernel photoacoustic forward model with adaptive supersampling,
its exact adjoint, and a regularized iterative reconstructor.
"""

from gpair.assa import AssaParams, KernelTaps, compute_assa, make_kernel_taps
from gpair.cls_def import AcousticConfig, AcquisitionConfig, ArrayLabel, Axis, PhantomKind, Precision
from gpair.exceptions import (DegenerateMaskError, FileFormatError, GeometryConflictError, GpairError,
                              InvalidArgumentError, NumericalFailureError, ResourceLimitError)
from gpair.geometry import (DetectorArray, ToFTable, VoxelGrid, VoxelImage, build_hemispherical_array,
                            build_planar_array, build_tof_table)
from gpair.operators import SignalSet, SystemModel, adjoint, adjoint_dot_test, forward
from gpair.recon import ReconConfig, gpair_reconstruct, single_pass_reconstruct
from gpair.regularization import RegConfig

__version__ = "0.1.0"
