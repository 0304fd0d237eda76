# -*- coding: utf-8 -*-


"""
gpair.exceptions
~~~~~~~~~~~~~~~~

This module contains the set of gpair's exceptions.
"""


from inspect import getframeinfo, stack


def _located(msg):
    # frame 0 is this helper, frame 1 the exception's __init__, frame 2 the raiser
    frames = stack()
    frame = frames[2][0] if len(frames) > 2 else frames[-1][0]
    last_frame_info = getframeinfo(frame)
    return f"{last_frame_info.filename}:{last_frame_info.lineno}, {msg}"


# Self-defined Errors / Exceptions

class GpairError(Exception):
    """An ambiguous exception that occurred while modeling or reconstructing."""


class InvalidArgumentError(GpairError, ValueError):
    """An invalid argument, shape mismatch or out-of-range index occurred."""

    def __init__(self, msg="Invalid argument error!"):
        self.msg = _located(msg)
        super().__init__(self.msg)


class GeometryConflictError(GpairError):
    """A detector coincides with a voxel center (zero source-detector distance)."""

    def __init__(self, msg="Geometry conflict error!", voxel=None, detector=None):
        self.voxel = voxel
        self.detector = detector
        if voxel is not None and detector is not None:
            msg = f"{msg} (voxel {voxel}, detector {detector})"
        self.msg = _located(msg)
        super().__init__(self.msg)


class ResourceLimitError(GpairError):
    """A configured size cap would be exceeded."""

    def __init__(self, msg="Resource limit error!"):
        self.msg = _located(msg)
        super().__init__(self.msg)


class NumericalFailureError(GpairError):
    """A non-finite loss or gradient was detected during optimization.

    Params
    ------
    - iteration: int, the iteration at which the failure was seen
    - last_good: np.ndarray | None, the last latent vector with a finite loss
    """

    def __init__(self, msg="Numerical failure error!", iteration=None, last_good=None):
        self.iteration = iteration
        self.last_good = last_good
        if iteration is not None:
            msg = f"{msg} (iteration {iteration})"
        self.msg = _located(msg)
        super().__init__(self.msg)


class FileFormatError(GpairError):
    """A file has a wrong magic, a malformed header or an inconsistent payload."""

    def __init__(self, msg="File format error!"):
        self.msg = _located(msg)
        super().__init__(self.msg)


class DegenerateMaskError(GpairError):
    """A metric mask is empty, overlapping, or selects a constant background."""

    def __init__(self, msg="Degenerate mask error!"):
        self.msg = _located(msg)
        super().__init__(self.msg)
