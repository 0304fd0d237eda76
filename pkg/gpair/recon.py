# -*- coding: utf-8 -*-

"""
gpair.recon
~~~~~~~~~~~

Iterative reconstruction: the nonnegative parameterization x = (z + eps)^2,
Adam updates on z under a cosine-annealing-with-warm-restarts learning rate,
and the data + vessel-continuity loss. Also the single-pass adjoint
reconstructor.

The learning-rate schedule follows T_cur = t mod T_0 and
T_i = T_0 * T_mult^floor(t / T_0) literally: cycles restart every T_0 steps
while T_i grows, so with T_mult > 1 later cycles never anneal all the way
down to eta_min.
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from gpair.cls_def import Precision
from gpair.exceptions import InvalidArgumentError, NumericalFailureError
from gpair.geometry import VoxelImage
from gpair.operators import SignalSet, SystemModel
from gpair.regularization import RegConfig, vcr_value_grad
from gpair.utils import DEFAULT_N_MIN, StageTimer, log_kv

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LatentImage:
    """Unconstrained latent z on a grid; the image is (z + eps_npc)^2."""
    grid: object
    z: np.ndarray
    eps_npc: float = 1e-8

    def __post_init__(self):
        z = np.asarray(self.z).reshape(-1)
        if z.shape[0] != self.grid.n_voxels:
            raise InvalidArgumentError(f"latent has {z.shape[0]} entries, grid needs {self.grid.n_voxels}")
        object.__setattr__(self, "z", z)


def npc_apply(latent):
    """x_i = (z_i + eps)^2."""
    return VoxelImage(latent.grid, np.square(latent.z + latent.eps_npc))


def npc_backprop(grad_x, latent):
    """dL/dz = dL/dx * 2 (z + eps)."""
    values = grad_x.values if isinstance(grad_x, VoxelImage) else np.asarray(grad_x)
    return values * (2.0 * (latent.z + latent.eps_npc))


@dataclass(frozen=True)
class ReconConfig:
    i_max: int = 200
    eta_max: float = 0.1
    eta_min: float = 1e-4
    t_0: int = 50
    t_mult: int = 2
    reg: RegConfig = field(default_factory=RegConfig)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    precision: Precision = Precision.double
    eps_npc: float = 1e-8
    init_backprojection: bool = False

    def __post_init__(self):
        if int(self.i_max) != self.i_max or self.i_max < 1:
            raise InvalidArgumentError(f"i_max must be an integer >= 1, got {self.i_max}")
        if not 0 <= self.eta_min <= self.eta_max:
            raise InvalidArgumentError(f"need 0 <= eta_min <= eta_max, got ({self.eta_min}, {self.eta_max})")
        if int(self.t_0) != self.t_0 or self.t_0 < 1:
            raise InvalidArgumentError(f"t_0 must be an integer >= 1, got {self.t_0}")
        if int(self.t_mult) != self.t_mult or self.t_mult < 1:
            raise InvalidArgumentError(f"t_mult must be an integer >= 1, got {self.t_mult}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise InvalidArgumentError("Adam needs 0 <= beta1, beta2 < 1 and eps > 0")
        if not self.eps_npc >= 0:
            raise InvalidArgumentError(f"eps_npc must be non-negative, got {self.eps_npc}")
        object.__setattr__(self, "precision", Precision(self.precision))

    def to_dict(self):
        out = asdict(self)
        reg = out.pop("reg")
        out["lambda"] = reg["lam"]
        out["beta"] = reg["beta"]
        out["eps_reg"] = reg["eps_reg"]
        out["precision"] = self.precision.value
        return out

    @classmethod
    def from_dict(cls, data, **overrides):
        """Build from a flat dict (JSON preset); `overrides` with value None are ignored."""
        data = dict(data)
        data.update({k: v for k, v in overrides.items() if v is not None})
        reg_keys = {"lambda": "lam", "lam": "lam", "beta": "beta", "eps_reg": "eps_reg"}
        reg = {reg_keys[k]: data.pop(k) for k in list(data) if k in reg_keys}
        known = set(cls.__dataclass_fields__) - {"reg"}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgumentError(f"unknown reconstruction config keys: {sorted(unknown)}")
        return cls(reg=RegConfig(**reg), **data)

    @classmethod
    def from_json(cls, path, **overrides):
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f), **overrides)


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n, dtype=np.float64):
        return cls(np.zeros(n, dtype=dtype), np.zeros(n, dtype=dtype), 0)


def cawr_lr(t, cfg):
    """eta_min + (eta_max - eta_min) / 2 * (1 + cos(pi * T_cur / T_i)).

    T_cur = t mod t_0 and T_i = t_0 * t_mult ** (t // t_0): restarts come every t_0
    steps whatever t_mult is, so with t_mult > 1 later cycles stop short of eta_min.
    """
    if t < 0:
        raise InvalidArgumentError(f"iteration must be >= 0, got {t}")
    t_cur = t % cfg.t_0
    t_i = cfg.t_0 * cfg.t_mult ** (t // cfg.t_0)
    return cfg.eta_min + 0.5 * (cfg.eta_max - cfg.eta_min) * (1.0 + math.cos(math.pi * t_cur / t_i))


def adam_step(z, grad_z, state, lr, cfg):
    """One bias-corrected Adam update.

    Returns
    -------
    - (np.ndarray, AdamState), the new latent and moments
    """
    t = state.t + 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    m = b1 * state.m + (1.0 - b1) * grad_z
    v = b2 * state.v + (1.0 - b2) * (grad_z * grad_z)
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    z_new = z - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return z_new, AdamState(m, v, t)


@dataclass(frozen=True, eq=False)
class LossTerms:
    """loss = data_term + reg_term, reg_term = lambda * R_VCR(x)."""
    loss: float
    data_term: float
    reg_term: float
    grad_z: np.ndarray


def _signal_data(b):
    return b.data if isinstance(b, SignalSet) else np.asarray(b)


def _sq_norm(a):
    flat = np.ravel(a).astype(np.float64, copy=False)
    return float(np.dot(flat, flat))


def loss_and_grad(z, b, model, cfg, iteration=None):
    """Loss ||A x - b||^2 / N + lambda R_VCR(x) at x = (z + eps)^2 and its z-gradient.

    The data gradient carries the exact 2 / N factor.

    Params
    ------
    - z: LatentImage
    - b: SignalSet | np.ndarray, observed traces
    - model: SystemModel
    - cfg: ReconConfig

    Returns
    -------
    - LossTerms
    """
    b_data = _signal_data(b)
    if b_data.shape != (model.array.n_detectors, model.acoustic.n_t):
        raise InvalidArgumentError(
            f"signals shape {b_data.shape} != ({model.array.n_detectors}, {model.acoustic.n_t})")
    n = model.n_samples
    x = npc_apply(z)
    residual = model.forward(x.values) - b_data
    data_term = _sq_norm(residual) / n
    grad_x = model.adjoint((2.0 / n) * residual)

    reg_term = 0.0
    if cfg.reg.lam > 0:
        reg_value, reg_grad = vcr_value_grad(x, cfg.reg)
        reg_term = cfg.reg.lam * reg_value
        grad_x = grad_x + cfg.reg.lam * reg_grad.values

    grad_z = npc_backprop(grad_x, z)
    loss = data_term + reg_term
    if not (math.isfinite(loss) and np.all(np.isfinite(grad_z))):
        raise NumericalFailureError("non-finite loss or gradient", iteration=iteration)
    return LossTerms(loss, data_term, reg_term, grad_z)


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    loss: float
    data_term: float
    reg_term: float
    lr: float
    wall_ms: float


@dataclass(frozen=True, eq=False)
class ReconResult:
    image: VoxelImage
    trace: list
    final_loss: float
    latent: LatentImage


def _initial_latent(model, b_data, dtype):
    """sqrt of the least-squares-scaled positive part of A^T b."""
    g = np.maximum(model.adjoint(b_data), 0.0)
    ag = model.forward(g)
    denom = _sq_norm(ag)
    scale = float(np.dot(np.ravel(ag).astype(np.float64), np.ravel(b_data).astype(np.float64))) / denom if denom > 0 else 0.0
    return np.sqrt(max(scale, 0.0) * g).astype(dtype)


def gpair_reconstruct(b, grid, array, acoustic, cfg, callbacks=(), model=None, sigma=None, n_min=DEFAULT_N_MIN):
    """Run exactly cfg.i_max Adam iterations from z = 0.

    Params
    ------
    - b: SignalSet, observed traces (N_d, N_t)
    - grid, array, acoustic: the acquisition geometry
    - cfg: ReconConfig
    - callbacks: iterable of callables f(t, IterationRecord, z)
    - model: SystemModel, reused when given
    - sigma: float, Gaussian width; defaults to the grid spacing

    Returns
    -------
    - ReconResult, the nonnegative image, the per-iteration trace and the loss of the returned image
    """
    b_data = _signal_data(b)
    if b_data.shape != (array.n_detectors, acoustic.n_t):
        raise InvalidArgumentError(f"signals shape {b_data.shape} != ({array.n_detectors}, {acoustic.n_t})")
    if model is None:
        model = SystemModel(grid, array, acoustic, sigma=sigma, n_min=n_min)
    dtype = cfg.precision.dtype
    b_data = b_data.astype(dtype)

    log_kv("assa", **model.assa.as_dict())
    log_kv("config", **cfg.to_dict())

    if cfg.init_backprojection:
        z = _initial_latent(model, b_data, dtype)
    else:
        z = np.zeros(grid.n_voxels, dtype=dtype)
    state = AdamState.zeros(grid.n_voxels, dtype)
    trace = []
    # latent of the most recent finite loss
    last_good = None

    with StageTimer("reconstruct", iterations=cfg.i_max):
        for t in range(cfg.i_max):
            start = time.perf_counter()
            try:
                terms = loss_and_grad(LatentImage(grid, z, cfg.eps_npc), b_data, model, cfg, iteration=t)
            except NumericalFailureError as error:
                raise NumericalFailureError("non-finite loss or gradient", iteration=t, last_good=last_good) from error
            last_good = z.copy()
            lr = cawr_lr(t, cfg)
            z, state = adam_step(z, terms.grad_z, state, lr, cfg)
            record = IterationRecord(t, terms.loss, terms.data_term, terms.reg_term, lr,
                                     (time.perf_counter() - start) * 1e3)
            trace.append(record)
            for callback in callbacks:
                callback(t, record, z)
            log_kv("iter", level=logging.DEBUG, **asdict(record))

    latent = LatentImage(grid, z, cfg.eps_npc)
    try:
        final = loss_and_grad(latent, b_data, model, cfg, iteration=cfg.i_max)
    except NumericalFailureError as error:
        raise NumericalFailureError("non-finite loss or gradient", iteration=cfg.i_max, last_good=last_good) from error
    log_kv("result", initial_loss=trace[0].loss, final_loss=final.loss)
    return ReconResult(npc_apply(latent), trace, final.loss, latent)


def single_pass_reconstruct(b, grid, array, acoustic, normalize=False, model=None, sigma=None, n_min=DEFAULT_N_MIN):
    """One adjoint application A^T b, optionally divided by its max magnitude."""
    b_data = _signal_data(b)
    if b_data.shape != (array.n_detectors, acoustic.n_t):
        raise InvalidArgumentError(f"signals shape {b_data.shape} != ({array.n_detectors}, {acoustic.n_t})")
    if model is None:
        model = SystemModel(grid, array, acoustic, sigma=sigma, n_min=n_min)
    with StageTimer("single_pass"):
        g = model.adjoint(b_data)
    if normalize:
        peak = float(np.max(np.abs(g))) if g.size else 0.0
        if peak > 0:
            g = g / peak
    return VoxelImage(grid, g)
