"""PSNR and SSIM."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError

PSNR_CAP_DB = 99.0


def psnr(x, ref, data_range=1.0):
    """10*log10(range^2 / MSE), capped at 99 dB for exact matches."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {ref.shape}")
    if data_range <= 0:
        raise ConfigError("data_range must be positive")
    mse = float(((x - ref) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(data_range ** 2 / mse))


def _gaussian_window(size, sigma):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(x, ref, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean local SSIM with a Gaussian window over valid positions."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {ref.shape}")
    if min(x.shape) < window:
        raise DimensionError("image smaller than the SSIM window")
    w = _gaussian_window(window, sigma)

    def local_mean(a):
        win = sliding_window_view(a, (window, window))
        return np.tensordot(win, w, axes=([2, 3], [0, 1]))

    mu_x = local_mean(x)
    mu_r = local_mean(ref)
    xx = local_mean(x * x) - mu_x ** 2
    rr = local_mean(ref * ref) - mu_r ** 2
    xr = local_mean(x * ref) - mu_x * mu_r
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_x * mu_r + c1) * (2 * xr + c2)
    den = (mu_x ** 2 + mu_r ** 2 + c1) * (xx + rr + c2)
    return float((num / den).mean())
