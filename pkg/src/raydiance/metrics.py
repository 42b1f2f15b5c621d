"""Image quality metrics: PSNR and SSIM on [0, 1] float images."""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d

# PSNR of two identical images is infinite; it is reported as this cap so
# tables and logs stay finite.
PSNR_CAP = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(img: np.ndarray, ref: np.ndarray) -> float:
    """-10 log10(MSE), capped at PSNR_CAP dB for (near-)identical images."""
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise ValueError(f"shape mismatch: {img.shape} vs {ref.shape}")
    mse = float(np.mean((img - ref) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * np.log10(mse))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    radius = size // 2
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    return np.outer(k, k)


def _ssim_channel(x: np.ndarray, y: np.ndarray, kernel: np.ndarray,
                  c1: float, c2: float) -> float:
    # 'valid' correlation == Gaussian filtering restricted to the interior,
    # i.e. the region an implementation that crops window-radius borders keeps
    mu_x = convolve2d(x, kernel, mode="valid")
    mu_y = convolve2d(y, kernel, mode="valid")
    mu_xx = convolve2d(x * x, kernel, mode="valid")
    mu_yy = convolve2d(y * y, kernel, mode="valid")
    mu_xy = convolve2d(x * y, kernel, mode="valid")
    var_x = mu_xx - mu_x ** 2
    var_y = mu_yy - mu_y ** 2
    cov = mu_xy - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(img: np.ndarray, ref: np.ndarray) -> float:
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), dynamic range 1.

    Grayscale or HxWxC; channels are averaged.
    """
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise ValueError(f"shape mismatch: {img.shape} vs {ref.shape}")
    if img.shape[0] < SSIM_WINDOW or img.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    if img.ndim == 2:
        return _ssim_channel(img, ref, kernel, c1, c2)
    values = [_ssim_channel(img[..., ch], ref[..., ch], kernel, c1, c2)
              for ch in range(img.shape[2])]
    return float(np.mean(values))
