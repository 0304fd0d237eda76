# -*- coding: utf-8 -*-

"""
gpair.bench
~~~~~~~~~~~

Per-stage wall time of the operator pipeline, reported as key=value lines.
Numbers are informational only; they depend on the machine.
"""

import logging

import numpy as np

from gpair.assa import make_kernel_taps
from gpair.geometry import VoxelImage, build_tof_table
from gpair.operators import (SignalSet, backproject, correlate, decimate, project_up, scatter_convolve,
                             zero_fill)
from gpair.utils import StageTimer, log_kv

logger = logging.getLogger(__name__)


def _best(fn, repeat):
    best = None
    out = None
    for _ in range(repeat):
        with StageTimer("bench", log=False) as timer:
            out = fn()
        best = timer.wall_ms if best is None else min(best, timer.wall_ms)
    return best, out


def run_bench(model, image, repeat=3):
    """Time every stage of forward and adjoint on `image`, best of `repeat`.

    Params
    ------
    - model: SystemModel
    - image: VoxelImage, the input of the forward stages
    - repeat: int

    Returns
    -------
    - dict, stage name -> best wall time in ms, plus `pairs_per_s` for forward and adjoint
    """
    repeat = max(1, int(repeat))
    assa, tof, taps = model.assa, model.tof, model.taps
    dtype = image.values.dtype
    # compile kernels outside the timed region
    model.adjoint(model.forward(image.values))

    timings = {}
    timings["tof_table"], _ = _best(lambda: build_tof_table(model.grid, model.array, model.acoustic, assa), repeat)
    timings["kernel_taps"], _ = _best(lambda: make_kernel_taps(assa, model.sigma, model.acoustic), repeat)
    timings["project_up"], up = _best(lambda: project_up(image, tof), repeat)
    timings["scatter_convolve"], conv = _best(lambda: scatter_convolve(up, taps), repeat)
    timings["decimate"], y = _best(lambda: decimate(conv, assa), repeat)
    residual = SignalSet(np.asarray(y.data, dtype=dtype), model.acoustic)
    timings["zero_fill"], dup = _best(lambda: zero_fill(residual, assa), repeat)
    timings["correlate"], dconv = _best(lambda: correlate(dup, taps), repeat)
    timings["backproject"], _ = _best(lambda: backproject(dconv, tof, model.grid), repeat)
    timings["forward"], _ = _best(lambda: model.forward(image.values), repeat)
    timings["adjoint"], _ = _best(lambda: model.adjoint(residual.data), repeat)

    pairs = model.grid.n_voxels * model.array.n_detectors
    for stage, wall_ms in timings.items():
        log_kv("bench", stage=stage, wall_ms=round(wall_ms, 3))
    for op in ("forward", "adjoint"):
        seconds = timings[op] / 1e3
        timings[f"{op}_pairs_per_s"] = pairs / seconds if seconds > 0 else float("inf")
        log_kv("throughput", op=op, voxels_x_detectors_per_s=round(timings[f"{op}_pairs_per_s"], 1))
    return timings


def bench_image(grid, dtype=np.float64, seed=0):
    """Random nonnegative input for timing runs."""
    rng = np.random.default_rng(seed)
    return VoxelImage(grid, rng.random(grid.n_voxels).astype(dtype))
