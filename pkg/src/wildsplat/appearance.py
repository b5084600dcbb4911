"""Latent appearance modeling.

Per-image embeddings and per-Gaussian features feed an MLP that predicts
per-Gaussian SH color coefficients. The viewing direction never enters the
MLP; it only enters the final SH evaluation, which is what makes cached
explicit colors possible (one MLP pass per embedding, reused for every
camera).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mlp import Mlp, MlpActivations
from .scene import EMBED_DIM, FEATURE_DIM, SH_DEGREE_COLOR, CameraView
from .shmath import eval_sh_basis, eval_sh_basis_grad, n_coeffs, sigmoid

DIRECTION_EPS = 1e-12


class AppearanceModel:
    """Per-image embeddings plus the coefficient-prediction MLP."""

    def __init__(self, n_images: int, rng: np.random.Generator,
                 embed_dim: int = EMBED_DIM, feature_dim: int = FEATURE_DIM,
                 hidden: int = 256, degree_max: int = SH_DEGREE_COLOR,
                 dtype=np.float32):
        self.embed_dim = embed_dim
        self.feature_dim = feature_dim
        self.degree_max = degree_max
        self.embeddings = rng.uniform(-0.1, 0.1, size=(n_images, embed_dim)).astype(dtype)
        self.mlp = Mlp(embed_dim + feature_dim, hidden, 3 * n_coeffs(degree_max), rng,
                       dtype=dtype)
        self.version = 0
        self.inference_count = 0

    @property
    def n_images(self) -> int:
        return self.embeddings.shape[0]

    def bump_version(self) -> None:
        """Invalidate caches after any update to the MLP or the features."""
        self.version += 1

    def mean_embedding(self) -> np.ndarray:
        return self.embeddings.mean(axis=0)

    def predict_sh(self, embedding: np.ndarray, features: np.ndarray, keep: bool = False):
        """One batched MLP pass: (48,) embedding + (N, 72) features -> (N, 3, K).

        The output is a per-Gaussian coefficient table; batch order is
        irrelevant (the MLP maps rows independently).
        """
        embedding = np.asarray(embedding)
        features = np.asarray(features)
        if embedding.shape != (self.embed_dim,):
            raise ValueError(f"embedding has shape {embedding.shape}, "
                             f"expected ({self.embed_dim},)")
        if features.ndim != 2 or features.shape[1] != self.feature_dim:
            raise ValueError(f"features have shape {features.shape}, "
                             f"expected (N, {self.feature_dim})")
        dtype = features.dtype
        x = np.concatenate(
            [np.broadcast_to(embedding.astype(dtype), (features.shape[0], self.embed_dim)),
             features], axis=1,
        )
        self.inference_count += 1
        if keep:
            out, acts = self.mlp.forward(x, keep=True)
            return out.reshape(-1, 3, n_coeffs(self.degree_max)), acts
        out = self.mlp.forward(x)
        return out.reshape(-1, 3, n_coeffs(self.degree_max))

    def predict_backward(self, acts: MlpActivations, d_coeffs: np.ndarray):
        """Gradients for the MLP weights, the embedding and the features."""
        d_out = np.asarray(d_coeffs).reshape(acts.x.shape[0], -1)
        grads, d_x = self.mlp.backward(acts, d_out)
        d_embedding = d_x[:, : self.embed_dim].sum(axis=0)
        d_features = d_x[:, self.embed_dim:]
        return grads, d_embedding, d_features

    def astype(self, dtype) -> "AppearanceModel":
        clone = AppearanceModel.__new__(AppearanceModel)
        clone.embed_dim = self.embed_dim
        clone.feature_dim = self.feature_dim
        clone.degree_max = self.degree_max
        clone.embeddings = self.embeddings.astype(dtype)
        clone.mlp = self.mlp.astype(dtype)
        clone.version = self.version
        clone.inference_count = 0
        return clone


@dataclass
class CachedAppearance:
    """Frozen coefficient table for one embedding (viewer fast path)."""

    embedding: np.ndarray
    coeffs: np.ndarray          # (N, 3, K)
    model_version: int

    def is_stale(self, model: AppearanceModel) -> bool:
        return self.model_version != model.version


def build_cache(model: AppearanceModel, features: np.ndarray,
                embedding: np.ndarray) -> CachedAppearance:
    """Single-inference cache of all per-Gaussian coefficients."""
    coeffs = model.predict_sh(embedding, features)
    return CachedAppearance(embedding=np.array(embedding, copy=True), coeffs=coeffs,
                            model_version=model.version)


@dataclass
class ViewColorCache:
    """Intermediates of colors_for_view kept for the backward pass."""

    dirs: np.ndarray       # (N, 3) unit view directions
    norms: np.ndarray      # (N,) distance camera -> gaussian
    degenerate: np.ndarray  # (N,) bool, fell back to +z
    basis: np.ndarray      # (N, K)
    colors: np.ndarray     # (N, 3)
    degree_max: int


def view_directions(means: np.ndarray, cam_center: np.ndarray):
    """Unit directions camera-center -> gaussian with a +z fallback."""
    vec = means - cam_center.astype(means.dtype)
    norms = np.linalg.norm(vec, axis=1)
    degenerate = norms < DIRECTION_EPS
    safe = np.where(degenerate, 1.0, norms)
    dirs = vec / safe[:, None]
    if degenerate.any():
        dirs[degenerate] = np.array([0.0, 0.0, 1.0], dtype=means.dtype)
    return dirs, norms, degenerate


def colors_for_view(means: np.ndarray, coeffs: np.ndarray, camera: CameraView,
                    degree_max: int = SH_DEGREE_COLOR, keep: bool = False):
    """Per-Gaussian rgb for one camera from a coefficient table."""
    dirs, norms, degenerate = view_directions(means, camera.center())
    basis = eval_sh_basis(dirs, degree_max)
    logits = np.einsum("nck,nk->nc", coeffs, basis)
    colors = sigmoid(logits)
    if not keep:
        return colors
    cache = ViewColorCache(dirs=dirs, norms=norms, degenerate=degenerate,
                           basis=basis, colors=colors, degree_max=degree_max)
    return colors, cache


def colors_backward(cache: ViewColorCache, coeffs: np.ndarray, d_colors: np.ndarray):
    """Backward of colors_for_view.

    Returns (d_coeffs, d_means): the mean gradient is the view-direction
    path (the geometric path flows through the rasterizer separately).
    """
    colors = cache.colors
    d_logits = np.asarray(d_colors) * colors * (1.0 - colors)
    d_coeffs = np.einsum("nc,nk->nck", d_logits, cache.basis)
    d_basis = np.einsum("nc,nck->nk", d_logits, coeffs)
    _, basis_jac = eval_sh_basis_grad(cache.dirs, cache.degree_max)
    d_dirs = np.einsum("nk,nka->na", d_basis, basis_jac)
    dot = np.einsum("na,na->n", cache.dirs, d_dirs)
    d_vec = (d_dirs - cache.dirs * dot[:, None]) / cache.norms[:, None]
    d_vec[cache.degenerate] = 0.0
    return d_coeffs, d_vec
