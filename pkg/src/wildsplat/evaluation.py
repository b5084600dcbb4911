"""Held-out evaluation: fit only an embedding on the left half of a test
image, report metrics on the right half.

Convention for odd widths: the left half is columns [0, floor(W/2)), the
right half is the rest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adam import Adam
from .appearance import AppearanceModel
from .background import BackgroundModel
from .metrics import psnr, ssim
from .pipeline import backward_view, forward_view
from .scene import GaussianCloud, TrainImage

EMBED_FIT_ITERATIONS = 128
EMBED_FIT_LR = 0.02


@dataclass
class EmbeddingFit:
    embedding: np.ndarray
    psnr_left: list[float]
    psnr_right: list[float]


def optimize_test_embedding(
    cloud: GaussianCloud,
    app_model: AppearanceModel,
    bg_model: BackgroundModel | None,
    image: TrainImage,
    iterations: int = EMBED_FIT_ITERATIONS,
    lr: float = EMBED_FIT_LR,
) -> EmbeddingFit:
    """Adam-fit a fresh embedding against L1 on the left image half.

    All model parameters stay frozen; the embedding starts at the mean of
    the training embeddings. Right-half pixels never influence the loss.
    """
    gt = image.pixels.astype(np.float64)
    width = image.camera.width
    split = width // 2
    embedding = app_model.mean_embedding().copy()
    adam = Adam({"embedding": lr})
    left_trace, right_trace = [], []
    for _ in range(iterations):
        vr = forward_view(cloud, app_model, bg_model, image.camera, embedding)
        pred = vr.image.astype(np.float64)
        left_trace.append(psnr(pred[:, :split], gt[:, :split]))
        right_trace.append(psnr(pred[:, split:], gt[:, split:]))
        diff = pred - gt
        n_left = diff[:, :split].size
        d_image = np.zeros_like(diff)
        d_image[:, :split] = np.sign(diff[:, :split]) / n_left
        grads = backward_view(
            vr, app_model, bg_model, d_image.astype(vr.image.dtype)
        )
        adam.step({"embedding": embedding}, {"embedding": grads["embedding"]})
    return EmbeddingFit(embedding=embedding, psnr_left=left_trace, psnr_right=right_trace)


@dataclass
class EvalRow:
    image_index: int
    psnr_right: float
    ssim_right: float
    psnr_right_baseline: float  # mean embedding, no fitting


def evaluate(
    cloud: GaussianCloud,
    app_model: AppearanceModel,
    bg_model: BackgroundModel | None,
    test_images: list[TrainImage],
    iterations: int = EMBED_FIT_ITERATIONS,
    lr: float = EMBED_FIT_LR,
) -> dict:
    """Left-half protocol over a test set; returns per-image and mean rows."""
    if not test_images:
        raise ValueError("test set is empty")
    rows = []
    for image in test_images:
        split = image.camera.width // 2
        gt_right = image.pixels[:, split:].astype(np.float64)
        baseline = forward_view(
            cloud, app_model, bg_model, image.camera, app_model.mean_embedding(),
            keep=False,
        ).image
        fit = optimize_test_embedding(cloud, app_model, bg_model, image,
                                      iterations=iterations, lr=lr)
        final = forward_view(
            cloud, app_model, bg_model, image.camera, fit.embedding, keep=False
        ).image
        pred_right = final[:, split:].astype(np.float64)
        rows.append(EvalRow(
            image_index=image.index,
            psnr_right=psnr(pred_right, gt_right),
            ssim_right=ssim(pred_right, gt_right),
            psnr_right_baseline=psnr(baseline[:, split:].astype(np.float64), gt_right),
        ))
    finite = [r.psnr_right for r in rows if np.isfinite(r.psnr_right)]
    return {
        "rows": rows,
        "mean_psnr_right": float(np.mean(finite)) if finite else float("inf"),
        "mean_ssim_right": float(np.mean([r.ssim_right for r in rows])),
        "mean_psnr_baseline": float(np.mean([r.psnr_right_baseline for r in rows])),
    }
