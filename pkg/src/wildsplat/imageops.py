"""Small image-space kernels: box filters and separable Gaussian windows.

All filters use zero padding ("same" output size); for symmetric kernels
that makes each filter its own adjoint, which the SSIM backward relies on.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d


def box_filter(image: np.ndarray, size: int) -> np.ndarray:
    """Mean filter with a size x size window, zero padded."""
    kernel = np.full(size, 1.0 / size, dtype=np.float64)
    out = correlate1d(image.astype(np.float64), kernel, axis=0, mode="constant", cval=0.0)
    out = correlate1d(out, kernel, axis=1, mode="constant", cval=0.0)
    return out.astype(image.dtype) if image.dtype.kind == "f" else out


def box_filter_renormalized(image: np.ndarray, size: int) -> np.ndarray:
    """Box mean over the in-image part of each window (no padding bias)."""
    summed = box_filter(image, size) * (size * size)
    counts = box_filter(np.ones_like(image, dtype=np.float64), size) * (size * size)
    return summed / counts


def gaussian_kernel_1d(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    xs = np.arange(size) - half
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def gaussian_filter_2d(image: np.ndarray, size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Separable Gaussian window, zero padded; filters each channel if 3D."""
    kernel = gaussian_kernel_1d(size, sigma).astype(image.dtype)
    out = correlate1d(image, kernel, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, kernel, axis=1, mode="constant", cval=0.0)
