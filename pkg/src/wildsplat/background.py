"""Infinite-distance spherical-harmonics background.

A small MLP maps an image embedding to background SH coefficients; the
background color is evaluated per pixel ray and composited behind the
Gaussians. The alpha loss suppresses Gaussians over pixels the background
already explains.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageops import box_filter
from .mlp import Mlp, MlpActivations
from .scene import EMBED_DIM, SH_DEGREE_BACKGROUND, CameraView
from .shmath import eval_sh_basis, n_coeffs, sigmoid

RESIDUAL_THRESHOLD = 0.08
SELECT_CUTOFF = 0.6


class BackgroundModel:
    """Embedding -> background SH coefficients (3 layers, width 128)."""

    def __init__(self, rng: np.random.Generator, embed_dim: int = EMBED_DIM,
                 hidden: int = 128, degree_max: int = SH_DEGREE_BACKGROUND,
                 dtype=np.float32):
        self.embed_dim = embed_dim
        self.degree_max = degree_max
        self.mlp = Mlp(embed_dim, hidden, 3 * n_coeffs(degree_max), rng, dtype=dtype)

    def predict_sh(self, embedding: np.ndarray, keep: bool = False):
        """Background coefficients (3, K) for one embedding."""
        embedding = np.asarray(embedding)
        if embedding.shape != (self.embed_dim,):
            raise ValueError(f"embedding has shape {embedding.shape}, "
                             f"expected ({self.embed_dim},)")
        if keep:
            out, acts = self.mlp.forward(embedding[None, :], keep=True)
            return out.reshape(3, n_coeffs(self.degree_max)), acts
        out = self.mlp.forward(embedding[None, :])
        return out.reshape(3, n_coeffs(self.degree_max))

    def predict_backward(self, acts: MlpActivations, d_coeffs: np.ndarray):
        grads, d_x = self.mlp.backward(acts, np.asarray(d_coeffs).reshape(1, -1))
        return grads, d_x[0]

    def astype(self, dtype) -> "BackgroundModel":
        clone = BackgroundModel.__new__(BackgroundModel)
        clone.embed_dim = self.embed_dim
        clone.degree_max = self.degree_max
        clone.mlp = self.mlp.astype(dtype)
        return clone


@dataclass
class BackgroundRender:
    """Per-view background buffer plus intermediates for backward."""

    rgb: np.ndarray      # (H, W, 3)
    basis: np.ndarray    # (H, W, K)
    degree_max: int


def background_image(coeffs: np.ndarray, camera: CameraView,
                     degree_max: int = SH_DEGREE_BACKGROUND,
                     ray_dirs: np.ndarray | None = None) -> BackgroundRender:
    """Sigmoid-SH background evaluated along every pixel ray."""
    if ray_dirs is None:
        ray_dirs = camera.ray_directions(dtype=coeffs.dtype)
    basis = eval_sh_basis(ray_dirs, degree_max)
    logits = np.einsum("ck,hwk->hwc", coeffs, basis)
    return BackgroundRender(rgb=sigmoid(logits), basis=basis, degree_max=degree_max)


def background_color(coeffs: np.ndarray, camera: CameraView, row: int, col: int,
                     degree_max: int = SH_DEGREE_BACKGROUND) -> np.ndarray:
    """Background rgb for a single pixel (row, col)."""
    if not (0 <= row < camera.height and 0 <= col < camera.width):
        raise ValueError(f"pixel ({row}, {col}) out of bounds")
    dirs = camera.ray_directions(dtype=np.float64)
    basis = eval_sh_basis(dirs[row, col], degree_max)
    return sigmoid(coeffs @ basis)


def background_image_backward(render: BackgroundRender, d_rgb: np.ndarray) -> np.ndarray:
    """d(loss)/d(coeffs) given d(loss)/d(background rgb)."""
    d_logits = np.asarray(d_rgb) * render.rgb * (1.0 - render.rgb)
    return np.einsum("hwc,hwk->ck", d_logits, render.basis)


def composite(fg_rgb: np.ndarray, alpha: np.ndarray, bg_rgb: np.ndarray) -> np.ndarray:
    """final(r) = foreground(r) + (1 - alpha(r)) * background(r)."""
    if fg_rgb.shape != bg_rgb.shape or alpha.shape != fg_rgb.shape[:2]:
        raise ValueError(
            f"shape mismatch: fg {fg_rgb.shape}, bg {bg_rgb.shape}, alpha {alpha.shape}"
        )
    return fg_rgb + (1.0 - alpha)[..., None] * bg_rgb


def composite_backward(alpha: np.ndarray, bg_rgb: np.ndarray, d_final: np.ndarray):
    """Returns (d_fg, d_alpha, d_bg) for the compositing equation."""
    d_fg = np.asarray(d_final)
    d_alpha = -np.einsum("hwc,hwc->hw", d_final, bg_rgb)
    d_bg = d_final * (1.0 - alpha)[..., None]
    return d_fg, d_alpha, d_bg


@dataclass
class BackgroundResidualMask:
    """Pixels the background model already explains well."""

    mask: np.ndarray        # M, binary
    blurred: np.ndarray     # M' = M * B_3x3
    selected: np.ndarray    # p_i = M' > 0.6
    threshold: float


def residual_mask(ground_truth: np.ndarray, predicted_background: np.ndarray,
                  threshold: float = RESIDUAL_THRESHOLD) -> BackgroundResidualMask:
    """M = 1 where the mean-abs-channel residual is below threshold; a 3x3
    box filter then requires the neighborhood to agree (M' > 0.6)."""
    if ground_truth.shape != predicted_background.shape:
        raise ValueError("ground truth and background shapes differ")
    residual = np.abs(np.asarray(ground_truth, dtype=np.float64)
                      - np.asarray(predicted_background, dtype=np.float64)).mean(axis=2)
    mask = (residual < threshold).astype(np.float64)
    blurred = box_filter(mask, 3)
    return BackgroundResidualMask(
        mask=mask, blurred=blurred, selected=blurred > SELECT_CUTOFF,
        threshold=float(threshold),
    )


def alpha_loss(alpha: np.ndarray, selected: np.ndarray, lam: float):
    """L_alpha = lam * sum of alpha over selected pixels.

    Returns (loss, d_alpha); the gradient is lam on selected pixels and 0
    elsewhere, to be fed into the rasterizer's alpha path.
    """
    alpha = np.asarray(alpha)
    selected = np.asarray(selected, dtype=bool)
    if selected.shape != alpha.shape:
        raise ValueError("selection mask shape differs from alpha buffer")
    loss = float(lam * alpha[selected].sum())
    grad = np.where(selected, np.asarray(lam, dtype=alpha.dtype), 0.0).astype(alpha.dtype)
    return loss, grad
