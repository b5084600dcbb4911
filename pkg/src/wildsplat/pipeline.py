"""Per-view forward/backward composition of the full rendering pipeline:
appearance colors -> rasterize -> spherical-harmonics background composite.

Used by the trainer, the evaluation protocol, and the render service.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rasterizer
from .appearance import AppearanceModel, ViewColorCache, colors_backward, colors_for_view
from .background import (
    BackgroundModel,
    BackgroundRender,
    background_image,
    background_image_backward,
    composite,
    composite_backward,
)
from .scene import CameraView, GaussianCloud


@dataclass
class ViewRender:
    """Everything produced while rendering one view."""

    render: rasterizer.RenderOutput
    image: np.ndarray                      # composited (H, W, 3)
    coeffs: np.ndarray                     # (N, 3, K)
    color_cache: ViewColorCache | None = field(repr=False, default=None)
    app_acts: object | None = field(repr=False, default=None)
    bg: BackgroundRender | None = field(repr=False, default=None)
    bg_coeffs: np.ndarray | None = field(repr=False, default=None)
    bg_acts: object | None = field(repr=False, default=None)


def forward_view(
    cloud: GaussianCloud,
    app_model: AppearanceModel,
    bg_model: BackgroundModel | None,
    camera: CameraView,
    embedding: np.ndarray,
    keep: bool = True,
    cached_coeffs: np.ndarray | None = None,
) -> ViewRender:
    """Render one view. With cached_coeffs the appearance MLP is skipped."""
    if cached_coeffs is not None:
        coeffs, app_acts = cached_coeffs, None
    elif keep:
        coeffs, app_acts = app_model.predict_sh(embedding, cloud.features, keep=True)
    else:
        coeffs, app_acts = app_model.predict_sh(embedding, cloud.features), None
    colors, color_cache = colors_for_view(
        cloud.means, coeffs, camera, degree_max=app_model.degree_max, keep=True
    )
    out = rasterizer.render_cloud(cloud, colors, camera, retain=keep)
    bg = bg_coeffs = bg_acts = None
    if bg_model is not None:
        if keep:
            bg_coeffs, bg_acts = bg_model.predict_sh(embedding, keep=True)
        else:
            bg_coeffs = bg_model.predict_sh(embedding)
        bg = background_image(bg_coeffs, camera, degree_max=bg_model.degree_max)
        image = composite(out.rgb, out.alpha, bg.rgb)
    else:
        image = out.rgb
    return ViewRender(
        render=out, image=image, coeffs=coeffs, color_cache=color_cache,
        app_acts=app_acts, bg=bg, bg_coeffs=bg_coeffs, bg_acts=bg_acts,
    )


def backward_view(
    vr: ViewRender,
    app_model: AppearanceModel,
    bg_model: BackgroundModel | None,
    d_image: np.ndarray,
    d_alpha_extra: np.ndarray | None = None,
) -> dict:
    """Reverse-mode gradients of a scalar loss through the whole pipeline.

    d_image is d(loss)/d(composited image); d_alpha_extra is an optional
    additional gradient on the accumulation buffer (the alpha loss).
    Returns a flat dict: cloud groups, "embedding", "app_mlp.*", "bg_mlp.*",
    plus densification bookkeeping.
    """
    if vr.app_acts is None:
        raise ValueError("cannot backpropagate through a cached-coefficient render")
    d_image = np.asarray(d_image)
    if bg_model is not None:
        d_fg, d_alpha, d_bg = composite_backward(vr.render.alpha, vr.bg.rgb, d_image)
        d_bg_coeffs = background_image_backward(vr.bg, d_bg)
        bg_grads, d_emb_bg = bg_model.predict_backward(vr.bg_acts, d_bg_coeffs)
    else:
        d_fg, d_alpha = d_image, np.zeros(vr.render.alpha.shape, dtype=d_image.dtype)
        bg_grads, d_emb_bg = {}, 0.0
    if d_alpha_extra is not None:
        d_alpha = d_alpha + d_alpha_extra
    ras = rasterizer.render_backward(vr.render, d_fg, d_alpha)
    d_coeffs, d_means_dir = colors_backward(vr.color_cache, vr.coeffs, ras["colors"])
    app_grads, d_emb_app, d_features = app_model.predict_backward(vr.app_acts, d_coeffs)

    grads = {
        "means": ras["means"] + d_means_dir,
        "quats": ras["quats"],
        "log_scales": ras["log_scales"],
        "opacity_logits": ras["opacity_logits"],
        "features": d_features,
        "embedding": d_emb_app + d_emb_bg,
        "screen_grad_norm": ras["screen_grad_norm"],
        "visible": ras["visible"],
    }
    for name, g in app_grads.items():
        grads[f"app_mlp.{name}"] = g
    for name, g in bg_grads.items():
        grads[f"bg_mlp.{name}"] = g
    return grads
