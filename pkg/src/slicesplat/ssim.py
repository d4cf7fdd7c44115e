"""Windowed SSIM with an analytic gradient.

The index is computed on every fully-interior 11x11 window (no padding),
weighted by a Gaussian window with sigma 1.5, with the usual stabilizers
C1 = 0.01^2 and C2 = 0.03^2 for unit dynamic range.  ``ssim_and_grad``
additionally returns d(mean SSIM)/d(first image), which the renderer chains
into its parameter gradients.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    """Normalized 1D Gaussian filter taps (the 2D window is its outer square)."""
    k = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-0.5 * (k / sigma) ** 2)
    return w / w.sum()


def _filter_valid(img, taps):
    # separable valid-mode correlation: full-size correlate, then crop the
    # border where the window hangs off the image
    half = len(taps) // 2
    out = correlate1d(img, taps, axis=0, mode="constant", cval=0.0)
    out = correlate1d(out, taps, axis=1, mode="constant", cval=0.0)
    return out[half:-half, half:-half]


def _scatter_full(grid, taps, shape):
    # adjoint of _filter_valid: embed the valid-grid values at their window
    # centers and correlate with the (symmetric) taps
    half = len(taps) // 2
    out = np.zeros(shape)
    out[half:-half, half:-half] = grid
    out = correlate1d(out, taps, axis=0, mode="constant", cval=0.0)
    out = correlate1d(out, taps, axis=1, mode="constant", cval=0.0)
    return out


def _check_inputs(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < WINDOW_SIZE:
        raise ValueError(
            f"image smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} SSIM window: {a.shape}"
        )
    return a, b


def ssim(a, b) -> float:
    """Mean local SSIM between two images on unit dynamic range."""
    a, b = _check_inputs(a, b)
    taps = gaussian_window()
    mu_a = _filter_valid(a, taps)
    mu_b = _filter_valid(b, taps)
    var_a = _filter_valid(a * a, taps) - mu_a**2
    var_b = _filter_valid(b * b, taps) - mu_b**2
    cov = _filter_valid(a * b, taps) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + C1) / (mu_a**2 + mu_b**2 + C1)
    struct = (2 * cov + C2) / (var_a + var_b + C2)
    return float(np.mean(lum * struct))


def ssim_and_grad(x, y):
    """Mean SSIM and its gradient with respect to ``x``.

    Returns
    -------
    value : float
    grad : ndarray, same shape as ``x``
        ``d mean_SSIM / d x``; ``y`` is treated as constant.
    """
    x, y = _check_inputs(x, y)
    taps = gaussian_window()
    mu_x = _filter_valid(x, taps)
    mu_y = _filter_valid(y, taps)
    var_x = _filter_valid(x * x, taps) - mu_x**2
    var_y = _filter_valid(y * y, taps) - mu_y**2
    cov = _filter_valid(x * y, taps) - mu_x * mu_y

    a1 = 2 * mu_x * mu_y + C1
    a2 = 2 * cov + C2
    b1 = mu_x**2 + mu_y**2 + C1
    b2 = var_x + var_y + C2
    s = (a1 * a2) / (b1 * b2)
    value = float(np.mean(s))

    # partials of the local index with respect to its five window statistics
    ds_dmu_x = 2 * mu_y * a2 / (b1 * b2) - 2 * mu_x * s / b1
    ds_dvar_x = -s / b2
    ds_dcov = 2 * a1 / (b1 * b2)

    n_windows = s.size
    grad = _scatter_full(
        ds_dmu_x - 2 * mu_x * ds_dvar_x - mu_y * ds_dcov, taps, x.shape
    )
    grad += 2 * x * _scatter_full(ds_dvar_x, taps, x.shape)
    grad += y * _scatter_full(ds_dcov, taps, x.shape)
    return value, grad / n_windows
