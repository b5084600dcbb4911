"""Scikit-learn style estimator facade over the training pipeline.

fit() optimizes a scene reconstruction, predict() renders views, score()
runs the left-half evaluation protocol. Hyperparameters follow sklearn
conventions (stored verbatim in __init__, validated at fit time), so the
estimator composes with get_params/set_params/clone tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .evaluation import evaluate
from .pipeline import forward_view
from .scene import CameraView, SceneBundle, TrainImage, load_scene
from .trainer import TrainConfig, TrainState, train


def resolve_appearance(app_model, spec) -> np.ndarray:
    """Map an appearance spec to an embedding vector.

    Accepted specs: an image index, a raw embedding vector, or a pair
    (a, b, t) meaning linear interpolation between image embeddings a and b.
    """
    if isinstance(spec, (int, np.integer)):
        if not 0 <= spec < app_model.n_images:
            raise ValueError(f"appearance index {spec} out of range")
        return app_model.embeddings[int(spec)]
    if isinstance(spec, tuple) and len(spec) == 3:
        a, b, t = spec
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"interpolation factor must lie in [0, 1], got {t}")
        ea = resolve_appearance(app_model, int(a))
        eb = resolve_appearance(app_model, int(b))
        t = np.asarray(t, dtype=ea.dtype)
        return (1 - t) * ea + t * eb
    arr = np.asarray(spec)
    if arr.shape != (app_model.embed_dim,):
        raise ValueError(
            f"appearance vector has shape {arr.shape}, expected ({app_model.embed_dim},)"
        )
    return arr


class WildSplat(BaseEstimator):
    """In-the-wild Gaussian splatting reconstruction as a fit/predict model."""

    def __init__(self, iterations=2000, seed=0, lambda_ssim=0.2, lambda_alpha=0.01,
                 per_min=0.05, per_max=0.40, use_background=True, use_mask=True,
                 mask_stats_scope="across-images", densify_interval=100,
                 max_gaussians=200_000, dtype="float32"):
        self.iterations = iterations
        self.seed = seed
        self.lambda_ssim = lambda_ssim
        self.lambda_alpha = lambda_alpha
        self.per_min = per_min
        self.per_max = per_max
        self.use_background = use_background
        self.use_mask = use_mask
        self.mask_stats_scope = mask_stats_scope
        self.densify_interval = densify_interval
        self.max_gaussians = max_gaussians
        self.dtype = dtype

    def _config(self) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations, seed=self.seed,
            lambda_ssim=self.lambda_ssim, lambda_alpha=self.lambda_alpha,
            per_min=self.per_min, per_max=self.per_max,
            mask_stats_scope=self.mask_stats_scope,
            use_background=self.use_background, use_mask=self.use_mask,
            densify_interval=self.densify_interval,
            max_gaussians=self.max_gaussians, dtype=self.dtype,
        )

    def fit(self, X, y=None, report_cb=None):
        """Optimize on a SceneBundle (or a scene directory path)."""
        bundle = load_scene(X) if isinstance(X, (str,)) else X
        if not isinstance(bundle, SceneBundle):
            raise TypeError("X must be a SceneBundle or a scene directory path")
        self.state_ = TrainState(bundle, self._config())
        train(self.state_, report_cb=report_cb)
        self.n_iterations_ = self.state_.iteration
        return self

    def _check_fitted(self) -> TrainState:
        if not hasattr(self, "state_"):
            raise NotFittedError("this WildSplat instance is not fitted yet")
        return self.state_

    def render(self, camera: CameraView, appearance=0) -> np.ndarray:
        """Render one camera under an appearance spec; returns (H, W, 3)."""
        state = self._check_fitted()
        embedding = resolve_appearance(state.app_model, appearance)
        return forward_view(
            state.cloud, state.app_model, state.bg_model, camera, embedding, keep=False
        ).image

    def predict(self, X, appearance=0) -> np.ndarray:
        """Render a list of cameras; returns (M, H, W, 3)."""
        cameras = [X] if isinstance(X, CameraView) else list(X)
        return np.stack([self.render(cam, appearance) for cam in cameras])

    def score(self, X, y=None) -> float:
        """Mean right-half PSNR of the left-half protocol over test images."""
        state = self._check_fitted()
        images = [X] if isinstance(X, TrainImage) else list(X)
        result = evaluate(state.cloud, state.app_model, state.bg_model, images)
        return result["mean_psnr_right"]
