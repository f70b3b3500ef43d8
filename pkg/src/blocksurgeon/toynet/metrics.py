"""Restoration quality metrics."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..tensor import Tensor

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 7


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def psnr(pred, target, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over all elements, capped at 100 dB."""
    p, t = _arr(pred), _arr(target)
    if p.shape != t.shape:
        raise ValueError(f"psnr: shape mismatch {p.shape} vs {t.shape}")
    mse = float(np.mean((p - t) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(max_val * max_val / mse))


def batch_psnr(pred, target, max_val: float = 1.0) -> float:
    """Mean of per-image PSNR over the leading axis."""
    p, t = _arr(pred), _arr(target)
    return float(np.mean([psnr(p[i], t[i], max_val) for i in range(p.shape[0])]))


def ssim(pred, target, data_range: float = 1.0) -> float:
    """Mean SSIM over all valid 7x7 uniform windows of every image and channel.

    Accepts HW, CHW or BCHW arrays.
    """
    p, t = _arr(pred), _arr(target)
    if p.shape != t.shape:
        raise ValueError(f"ssim: shape mismatch {p.shape} vs {t.shape}")
    if p.ndim < 2 or p.shape[-1] < SSIM_WINDOW or p.shape[-2] < SSIM_WINDOW:
        raise ValueError(f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    axes = (p.ndim - 2, p.ndim - 1)
    wp = sliding_window_view(p, (SSIM_WINDOW, SSIM_WINDOW), axis=axes)
    wt = sliding_window_view(t, (SSIM_WINDOW, SSIM_WINDOW), axis=axes)
    mu_p = wp.mean(axis=(-2, -1))
    mu_t = wt.mean(axis=(-2, -1))
    var_p = (wp * wp).mean(axis=(-2, -1)) - mu_p ** 2
    var_t = (wt * wt).mean(axis=(-2, -1)) - mu_t ** 2
    cov = (wp * wt).mean(axis=(-2, -1)) - mu_p * mu_t
    num = (2 * mu_p * mu_t + c1) * (2 * cov + c2)
    den = (mu_p ** 2 + mu_t ** 2 + c1) * (var_p + var_t + c2)
    return float(np.mean(num / den))
