"""PSNR and SSIM for images with values in [0, 1]."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError

PSNR_CAP = 100.0


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(getattr(a, "data", a), dtype=float)
    b = np.asarray(getattr(b, "data", b), dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """10 log10(1 / MSE) in dB; identical images give the 100 dB cap."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' filtering of the last two axes."""
    x = sliding_window_view(x, len(g), axis=-1) @ g
    return np.swapaxes(sliding_window_view(np.swapaxes(x, -1, -2), len(g), axis=-1) @ g, -1, -2)


def ssim(a, b, win_size: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM, Gaussian window, dynamic range 1.

    Averaged over all valid window positions and over channels.
    """
    a, b = _pair(a, b)
    if a.shape[-1] < win_size or a.shape[-2] < win_size:
        raise ContractError(f"image {a.shape[-2:]} smaller than the {win_size}x{win_size} window")
    if a.ndim == 2:
        a, b = a[None], b[None]
    g = _gaussian_window(win_size, sigma)
    c1, c2 = k1 ** 2, k2 ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float((num / den).mean(axis=(-2, -1)).mean())
