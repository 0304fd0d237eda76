# -*- coding: utf-8 -*-

"""
gpair.metrics
~~~~~~~~~~~~~

Reference metrics (MSE, PSNR, SSIM) and reference-free metrics (CNR, SNR,
background std, boundary sharpness) on volumes or MAP images.

Reference metrics compare max-normalized inputs. Reference-free metrics
need explicit masks; `threshold_masks` derives them from a volume.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from gpair.exceptions import DegenerateMaskError, InvalidArgumentError
from gpair.geometry import VoxelImage
from gpair.utils import PSNR_CAP_DB

SSIM_SIGMA = 1.5
SSIM_EXTENT = 11
SSIM_K1 = 0.01
SSIM_K2 = 0.03

MSE_FLOOR = 1e-20


def _as_array(x):
    if isinstance(x, VoxelImage):
        return np.asarray(x.volume, dtype=np.float64)
    return np.asarray(x, dtype=np.float64)


def _pair(x, ref, normalize):
    a, b = _as_array(x), _as_array(ref)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    if normalize:
        a, b = max_normalize(a), max_normalize(b)
    return a, b


def max_normalize(a):
    peak = float(np.max(a)) if a.size else 0.0
    return a / peak if peak > 0 else a


def mse_psnr(x, ref, normalize=True):
    """Mean squared difference and 10 log10(1 / mse), capped at 200 dB.

    Returns
    -------
    - (float, float)
    """
    a, b = _pair(x, ref, normalize)
    diff = a - b
    mse = float(np.mean(diff * diff))
    psnr = PSNR_CAP_DB if mse < MSE_FLOOR else min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))
    return mse, psnr


def _local_moment(a, radii):
    crop = tuple(slice(r, n - r) for r, n in zip(radii, a.shape))
    return ndimage.gaussian_filter(a, SSIM_SIGMA, mode="reflect", radius=radii)[crop]


def ssim3d(x, ref, normalize=True):
    """Mean local structural similarity with a separable Gaussian window.

    The window has sigma 1.5 and radius 5 (extent 11), reduced along any axis
    shorter than 11; only positions the window fully covers are averaged.
    """
    a, b = _pair(x, ref, normalize)
    if a.ndim == 0 or a.size == 0:
        raise InvalidArgumentError("ssim needs a non-empty array")
    radii = [min(SSIM_EXTENT // 2, (n - 1) // 2) for n in a.shape]
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2

    mu1 = _local_moment(a, radii)
    mu2 = _local_moment(b, radii)
    s11 = _local_moment(a * a, radii) - mu1 * mu1
    s22 = _local_moment(b * b, radii) - mu2 * mu2
    s12 = _local_moment(a * b, radii) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class MetricReport:
    psnr: float = None
    ssim: float = None
    mse: float = None
    cnr: float = None
    snr: float = None
    bg_std: float = None
    sharpness: float = None

    def to_dict(self):
        return asdict(self)


def _mask(mask, shape, name):
    m = _as_array(mask) != 0
    if m.shape != shape:
        raise InvalidArgumentError(f"{name} shape {m.shape} != volume shape {shape}")
    if not m.any():
        raise DegenerateMaskError(f"{name} is empty")
    return m


def reference_free_metrics(x, signal_mask, bg_mask):
    """CNR, SNR, background std and boundary sharpness on the max-normalized input.

    cnr = (mu_sig - mu_bg) / sigma_bg; snr = mu_sig / sigma_bg; sharpness is the
    mean gradient magnitude over the shell dilation(signal) minus erosion(signal).

    Returns
    -------
    - (cnr, snr, bg_std, sharpness)
    """
    a = max_normalize(_as_array(x))
    sig = _mask(signal_mask, a.shape, "signal mask")
    bg = _mask(bg_mask, a.shape, "background mask")
    if np.any(sig & bg):
        raise DegenerateMaskError("signal and background masks overlap")

    mu_sig = float(np.mean(a[sig]))
    mu_bg = float(np.mean(a[bg]))
    sigma_bg = float(np.std(a[bg]))
    if sigma_bg == 0.0:
        raise DegenerateMaskError("background has zero variance")

    shell = ndimage.binary_dilation(sig) & ~ndimage.binary_erosion(sig)
    grads = np.gradient(a) if a.ndim > 1 else [np.gradient(a)]
    magnitude = np.sqrt(sum(g * g for g in grads))
    sharpness = float(np.mean(magnitude[shell])) if shell.any() else 0.0
    return (mu_sig - mu_bg) / sigma_bg, mu_sig / sigma_bg, sigma_bg, sharpness


def threshold_masks(x, level=0.1, bg_margin=2):
    """Signal = opening of (x >= level * max); background = complement of the signal dilated bg_margin times.

    Returns
    -------
    - (np.ndarray, np.ndarray), boolean signal and background masks
    """
    a = max_normalize(_as_array(x))
    raw = a >= level
    sig = ndimage.binary_opening(raw, structure=ndimage.generate_binary_structure(a.ndim, 1))
    if not sig.any():
        sig = raw
    if not sig.any():
        raise DegenerateMaskError("no voxel reaches the threshold")
    bg = ~ndimage.binary_dilation(sig, iterations=bg_margin)
    if not bg.any():
        raise DegenerateMaskError("signal mask leaves no background")
    return sig, bg


def largest_component_fraction(x, level=0.1):
    """Share of supra-threshold voxels in the largest 26-connected component."""
    a = max_normalize(_as_array(x))
    supra = a >= level
    total = int(np.count_nonzero(supra))
    if total == 0:
        return 0.0
    labels, n = ndimage.label(supra, structure=np.ones((3,) * a.ndim, dtype=bool))
    sizes = np.bincount(labels.ravel())[1:]
    return float(sizes.max()) / total if n else 0.0


def evaluate(x, ref=None, signal_mask=None, bg_mask=None):
    """All metrics that the supplied inputs allow."""
    fields = {}
    if ref is not None:
        fields["mse"], fields["psnr"] = mse_psnr(x, ref)
        fields["ssim"] = ssim3d(x, ref)
    if signal_mask is not None and bg_mask is not None:
        cnr, snr, bg_std, sharpness = reference_free_metrics(x, signal_mask, bg_mask)
        fields.update(cnr=cnr, snr=snr, bg_std=bg_std, sharpness=sharpness)
    return MetricReport(**fields)


def evaluate_with_maps(x, ref=None, signal_mask=None, bg_mask=None):
    """Metrics on the volume and on its z-MAP (reference metrics only on the MAP)."""
    report = {"volume": evaluate(x, ref, signal_mask, bg_mask).to_dict()}
    if ref is not None and _as_array(x).ndim == 3:
        report["z_map"] = evaluate(_as_array(x).max(axis=0), _as_array(ref).max(axis=0)).to_dict()
    return report
