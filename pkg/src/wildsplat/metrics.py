"""PSNR and SSIM, plus the masked D-SSIM term used by training.

SSIM follows the canonical formulation: 11x11 Gaussian window (sigma 1.5),
C1 = 0.01^2, C2 = 0.03^2 at dynamic range 1, averaged over channels. Images
smaller than the window fall back to global statistics. The windowed path
uses zero padding, so the window operator is its own adjoint in the
backward pass.
"""

from __future__ import annotations

import numpy as np

from .imageops import gaussian_filter_2d

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for buffers in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _channels(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    return img[..., None] if img.ndim == 2 else img


def _ssim_channel_stats(x, y, windowed: bool):
    if windowed:
        blur = lambda f: gaussian_filter_2d(f, WINDOW_SIZE, WINDOW_SIGMA)  # noqa: E731
    else:
        blur = lambda f: np.mean(f)  # noqa: E731
    m1, m2 = blur(x), blur(y)
    r, s, t = blur(x * x), blur(y * y), blur(x * y)
    vx = r - m1 * m1
    vy = s - m2 * m2
    vxy = t - m1 * m2
    a1 = 2 * m1 * m2 + C1
    b1 = m1 * m1 + m2 * m2 + C1
    a2 = 2 * vxy + C2
    b2 = vx + vy + C2
    return m1, m2, a1, b1, a2, b2


def ssim_with_grad(a: np.ndarray, b: np.ndarray):
    """Mean SSIM plus gradients with respect to both images.

    Returns (value, d_a, d_b). Gradients are exact for the zero-padded
    windowed map (or the global-statistics fallback for tiny images).
    """
    a = _channels(np.asarray(a, dtype=np.float64))
    b = _channels(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    h, w, n_ch = a.shape
    windowed = min(h, w) >= WINDOW_SIZE
    total = 0.0
    d_a = np.zeros_like(a)
    d_b = np.zeros_like(b)
    for ch in range(n_ch):
        x, y = a[..., ch], b[..., ch]
        m1, m2, a1, b1, a2, b2 = _ssim_channel_stats(x, y, windowed)
        p = a1 / b1
        q = a2 / b2
        s_map = p * q
        total += np.mean(s_map)
        # upstream of the per-pixel map: mean over pixels and channels
        ds = np.ones_like(s_map) / (s_map.size * n_ch) if windowed else 1.0 / n_ch
        d_m1 = ds * (q * (2 * m2 * b1 - 2 * m1 * a1) / b1**2
                     + p * (2 * m1 * a2 - 2 * m2 * b2) / b2**2)
        d_m2 = ds * (q * (2 * m1 * b1 - 2 * m2 * a1) / b1**2
                     + p * (2 * m2 * a2 - 2 * m1 * b2) / b2**2)
        d_r = ds * (-p * a2 / b2**2)
        d_s = ds * (-p * a2 / b2**2)
        d_t = ds * (p * 2 / b2)
        if windowed:
            blur = lambda f: gaussian_filter_2d(f, WINDOW_SIZE, WINDOW_SIGMA)  # noqa: E731
            d_a[..., ch] = blur(d_m1) + 2 * x * blur(d_r) + y * blur(d_t)
            d_b[..., ch] = blur(d_m2) + 2 * y * blur(d_s) + x * blur(d_t)
        else:
            inv_n = 1.0 / x.size
            d_a[..., ch] = (d_m1 + 2 * x * d_r + y * d_t) * inv_n
            d_b[..., ch] = (d_m2 + 2 * y * d_s + x * d_t) * inv_n
    return total / n_ch, d_a, d_b


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity in [-1, 1]."""
    value, _, _ = ssim_with_grad(a, b)
    return float(value)


def masked_dssim(pred: np.ndarray, gt: np.ndarray, inlier: np.ndarray):
    """D-SSIM = (1 - SSIM)/2 with outlier pixels of gt replaced by pred.

    The replacement zeroes the gradient influence of masked pixels (with
    inlier == 0 everywhere the value and gradient are exactly zero).
    Returns (value, d_pred).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    w = np.asarray(inlier, dtype=np.float64)
    if w.ndim == 2:
        w = w[..., None]
    gt_eff = w * gt + (1.0 - w) * pred
    value, d_pred_direct, d_gt_eff = ssim_with_grad(pred, gt_eff)
    d_pred = -0.5 * (d_pred_direct + (1.0 - w) * d_gt_eff)
    return (1.0 - value) / 2.0, d_pred
