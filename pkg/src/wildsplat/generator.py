"""Synthetic scene generation.

Renders a random ground-truth Gaussian cloud through the package rasterizer
under per-image affine color transforms (tint/exposure stand-ins for
photometric variation), optionally pastes opaque occluder rectangles to
emulate transients, and records exact labels and masks. The training cloud
handed out in the bundle is the ground-truth geometry perturbed by noise,
optionally padded with distant "sky" points that mimic spurious
reconstruction points at infinity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rasterizer
from .scene import (
    FEATURE_DIM,
    CameraView,
    GaussianCloud,
    SceneBundle,
    TrainImage,
    look_at,
    quantize_linear_image,
)
from .tensorio import read_tensor, write_tensor

MAX_GAUSSIANS = 5000
MAX_VIEWS = 64


@dataclass
class GeneratorConfig:
    seed: int = 0
    n_gaussians: int = 500
    n_views: int = 16
    n_appearances: int = 3
    image_size: tuple[int, int] = (64, 64)  # (height, width)
    n_poses: int | None = None              # reuse poses when fewer than views
    n_test_views: int = 0
    test_blend: bool = True                 # test condition = blend of 0 and 1
    occluder_frac: float = 0.0              # occluder area fraction per image
    occluder_image_frac: float = 1.0        # fraction of images with occluders
    n_sky_points: int = 0                   # distant init-only points
    background: str = "gradient"            # "gradient" | "none"
    pos_noise: float = 0.03                 # init noise, relative to radius
    feature_scale: float = 0.2


@dataclass
class GroundTruth:
    """Exact labels the generator recorded: geometry, photometric
    transforms, occluder masks, and the pre-transform base renders."""

    gt_means: np.ndarray
    gt_quats: np.ndarray
    gt_log_scales: np.ndarray
    gt_opacity_logits: np.ndarray
    gt_colors: np.ndarray
    scene_radius: float
    background: str
    bg_low: np.ndarray
    bg_high: np.ndarray
    bg_axis: np.ndarray
    conditions: np.ndarray        # (V,) condition index per training image
    gains: np.ndarray             # (C, 3) per condition
    biases: np.ndarray            # (C, 3)
    occluder_rects: np.ndarray    # (V, 4) x0,y0,x1,y1 or -1
    occluder_colors: np.ndarray   # (V, 3)
    occluder_masks: np.ndarray    # (V, H, W) uint8
    base_images: np.ndarray       # (V, H, W, 3) float32, pre-transform
    test_gains: np.ndarray        # (T, 3)
    test_biases: np.ndarray       # (T, 3)
    test_base_images: np.ndarray  # (T, H, W, 3)

    def transform_image(self, base: np.ndarray, condition: int) -> np.ndarray:
        """Apply a recorded appearance condition to a base render."""
        out = np.clip(base * self.gains[condition] + self.biases[condition], 0.0, 1.0)
        return quantize_linear_image(out.astype(np.float32))

    def save(self, path: Path | str) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        scalars = {
            "scene_radius": self.scene_radius,
            "background": self.background,
        }
        with open(path / "truth.json", "w") as fh:
            json.dump(scalars, fh, indent=2)
        for name in _TRUTH_ARRAYS:
            write_tensor(path / f"{name}.bin", getattr(self, name))

    @classmethod
    def load(cls, path: Path | str) -> "GroundTruth":
        path = Path(path)
        with open(path / "truth.json") as fh:
            scalars = json.load(fh)
        arrays = {name: read_tensor(path / f"{name}.bin") for name in _TRUTH_ARRAYS}
        return cls(scene_radius=scalars["scene_radius"],
                   background=scalars["background"], **arrays)


_TRUTH_ARRAYS = [
    "gt_means", "gt_quats", "gt_log_scales", "gt_opacity_logits", "gt_colors",
    "bg_low", "bg_high", "bg_axis", "conditions", "gains", "biases",
    "occluder_rects", "occluder_colors", "occluder_masks", "base_images",
    "test_gains", "test_biases", "test_base_images",
]


def _logit(p):
    return np.log(p / (1.0 - p))


def _orbit_camera(rng: np.random.Generator, azimuth: float, height: int,
                  width: int) -> CameraView:
    # frame the cloud with visible sky around it (roughly half the pixels)
    elevation = rng.uniform(0.10, 0.45)
    radius = rng.uniform(3.2, 4.0)
    eye = radius * np.array([
        np.cos(elevation) * np.cos(azimuth),
        np.cos(elevation) * np.sin(azimuth),
        np.sin(elevation),
    ])
    target = rng.uniform(-0.05, 0.05, size=3)
    rotation, translation = look_at(eye, target)
    return CameraView(rotation=rotation, translation=translation,
                      fx=0.9 * width, fy=0.9 * width,
                      cx=width / 2.0, cy=height / 2.0,
                      width=width, height=height)


def _background_buffer(truth_low, truth_high, truth_axis, camera) -> np.ndarray:
    dirs = camera.ray_directions(dtype=np.float32)
    blend = 0.5 + 0.5 * (dirs @ truth_axis.astype(np.float32))
    return truth_low.astype(np.float32) + blend[..., None] * (
        truth_high - truth_low
    ).astype(np.float32)


def _occluder_shape(rng, target_px: int, height: int, width: int, region_top: int):
    """Rectangle (w, h) within 1% of the target pixel count, preferring an
    aspect ratio near the sampled one."""
    aspect = rng.uniform(0.6, 1.6)
    w_pref = np.sqrt(target_px * aspect)
    max_h = height - region_top
    best = None
    for w in range(2, width + 1):
        for h in (target_px // w, -(-target_px // w)):
            if not 2 <= h <= max_h:
                continue
            err = abs(w * h - target_px)
            if err > 0.01 * target_px:
                continue
            rank = (err, abs(w - w_pref))
            if best is None or rank < best[0]:
                best = (rank, w, h)
    if best is None:
        raise ValueError(
            f"cannot place an occluder of {target_px} px within 1% "
            f"inside a {width}x{max_h} region"
        )
    return best[1], best[2]


def generate_synthetic_scene(config: GeneratorConfig) -> SceneBundle:
    """Build a fully labeled synthetic scene (deterministic per seed)."""
    cfg = config
    if cfg.n_views < 1:
        raise ValueError("need at least one view")
    if cfg.n_gaussians > MAX_GAUSSIANS or cfg.n_views > MAX_VIEWS:
        raise ValueError(
            f"desk-scale limits are {MAX_GAUSSIANS} gaussians / {MAX_VIEWS} views"
        )
    if cfg.n_appearances < 1:
        raise ValueError("need at least one appearance condition")
    if cfg.background not in ("gradient", "none"):
        raise ValueError(f"unknown background kind {cfg.background!r}")
    rng = np.random.default_rng(cfg.seed)
    height, width = cfg.image_size
    n = cfg.n_gaussians

    # ground-truth cloud
    gt_means = rng.uniform(-0.8, 0.8, size=(n, 3))
    gt_quats = rng.normal(size=(n, 4))
    gt_quats /= np.linalg.norm(gt_quats, axis=1, keepdims=True) + 1e-12
    gt_log_scales = np.log(rng.uniform(0.045, 0.11, size=(n, 3)))
    gt_opacity_logits = _logit(rng.uniform(0.80, 0.97, size=n))
    # saturated foreground palette: 1-2 bright channels per gaussian, the
    # rest dark, so foreground pixels stay distinguishable from the smooth
    # near-gray sky ramp (as real foreground is from real sky)
    gt_colors = rng.uniform(0.12, 0.30, size=(n, 3))
    for i in range(n):
        bright = rng.choice(3, size=int(rng.integers(1, 3)), replace=False)
        gt_colors[i, bright] = rng.uniform(0.62, 0.78, size=len(bright))
    if n:
        center = gt_means.mean(axis=0)
        scene_radius = float(np.linalg.norm(gt_means - center, axis=1).mean() + 1e-6)
    else:
        scene_radius = 1.0

    base_lo, base_hi = rng.uniform(0.30, 0.40), rng.uniform(0.66, 0.76)
    bg_low = base_lo + rng.uniform(-0.02, 0.02, size=3)
    bg_high = base_hi + rng.uniform(-0.02, 0.02, size=3)
    bg_axis = np.array([0.15, 0.0, 1.0]) + rng.uniform(-0.1, 0.1, size=3)
    bg_axis /= np.linalg.norm(bg_axis)

    n_poses = cfg.n_poses or cfg.n_views
    poses = [
        _orbit_camera(rng, 2 * np.pi * p / n_poses + rng.uniform(-0.05, 0.05),
                      height, width)
        for p in range(n_poses)
    ]

    # appearance conditions; condition 0 is the identity transform
    gains = np.ones((cfg.n_appearances, 3))
    biases = np.zeros((cfg.n_appearances, 3))
    for c in range(1, cfg.n_appearances):
        gains[c] = rng.uniform(0.75, 1.2, size=3)
        biases[c] = rng.uniform(-0.08, 0.05, size=3)
    conditions = np.arange(cfg.n_views, dtype=np.int64) % cfg.n_appearances

    gt_cloud_geom = None
    if n:
        gt_cloud_geom = GaussianCloud(
            means=gt_means.astype(np.float32),
            quats=gt_quats.astype(np.float32),
            log_scales=gt_log_scales.astype(np.float32),
            opacity_logits=gt_opacity_logits.astype(np.float32),
            features=np.zeros((n, FEATURE_DIM), dtype=np.float32),
        )

    def base_render(camera: CameraView) -> np.ndarray:
        if cfg.background == "gradient":
            buf = _background_buffer(bg_low, bg_high, bg_axis, camera)
        else:
            buf = np.zeros((height, width, 3), dtype=np.float32)
        if gt_cloud_geom is None:
            return buf
        out = rasterizer.render_cloud(gt_cloud_geom, gt_colors.astype(np.float32), camera)
        return (out.rgb + (1.0 - out.alpha)[..., None] * buf).astype(np.float32)

    pose_cache: dict[int, np.ndarray] = {}

    def base_for_pose(p: int) -> np.ndarray:
        if p not in pose_cache:
            pose_cache[p] = base_render(poses[p])
        return pose_cache[p]

    n_occluded = int(round(cfg.occluder_image_frac * cfg.n_views)) if cfg.occluder_frac > 0 else 0
    occluded_set = set(rng.permutation(cfg.n_views)[:n_occluded].tolist())
    region_top = int(np.ceil(0.45 * height))

    images, base_images = [], []
    occluder_rects = np.full((cfg.n_views, 4), -1, dtype=np.int64)
    occluder_colors = np.zeros((cfg.n_views, 3))
    occluder_masks = np.zeros((cfg.n_views, height, width), dtype=np.uint8)
    for j in range(cfg.n_views):
        pose_idx = j % n_poses
        base = base_for_pose(pose_idx)
        img = np.clip(base * gains[conditions[j]] + biases[conditions[j]], 0.0, 1.0)
        if j in occluded_set:
            target_px = int(round(cfg.occluder_frac * height * width))
            w_occ, h_occ = _occluder_shape(rng, target_px, height, width, region_top)
            y0 = int(rng.integers(region_top, height - h_occ + 1))
            x0 = int(rng.integers(0, width - w_occ + 1))
            color = rng.uniform(0.0, 1.0, size=3)
            img = img.copy()
            img[y0:y0 + h_occ, x0:x0 + w_occ] = color
            occluder_rects[j] = (x0, y0, x0 + w_occ, y0 + h_occ)
            occluder_colors[j] = color
            occluder_masks[j, y0:y0 + h_occ, x0:x0 + w_occ] = 1
        images.append(TrainImage(index=j, pixels=quantize_linear_image(img.astype(np.float32)),
                                 camera=poses[pose_idx]))
        base_images.append(base)

    # held-out views (novel poses; optionally a novel blended condition)
    test_images, test_bases = [], []
    test_gains = np.zeros((cfg.n_test_views, 3))
    test_biases = np.zeros((cfg.n_test_views, 3))
    for ti in range(cfg.n_test_views):
        camera = _orbit_camera(
            rng, 2 * np.pi * (ti + 0.37) / max(cfg.n_test_views, 1), height, width
        )
        base = base_render(camera)
        if cfg.test_blend and cfg.n_appearances >= 2:
            lam = 0.5
            g = (1 - lam) * gains[0] + lam * gains[1]
            b = (1 - lam) * biases[0] + lam * biases[1]
        else:
            cond = int(rng.integers(0, cfg.n_appearances))
            g, b = gains[cond], biases[cond]
        test_gains[ti], test_biases[ti] = g, b
        img = np.clip(base * g + b, 0.0, 1.0)
        test_images.append(TrainImage(index=ti, pixels=quantize_linear_image(img.astype(np.float32)),
                                      camera=camera))
        test_bases.append(base)

    # training cloud: perturbed ground truth plus optional sky points
    init_means = gt_means + rng.normal(0.0, cfg.pos_noise * scene_radius, size=(n, 3))
    init_quats = gt_quats + 0.05 * rng.normal(size=(n, 4))
    init_log_scales = gt_log_scales + 0.1 * rng.normal(size=(n, 3))
    init_opacity = gt_opacity_logits + 0.1 * rng.normal(size=n)
    if cfg.n_sky_points:
        m = cfg.n_sky_points
        sky_dirs = rng.normal(size=(m, 3))
        sky_dirs[:, 2] = np.abs(sky_dirs[:, 2]) + 0.3
        sky_dirs /= np.linalg.norm(sky_dirs, axis=1, keepdims=True)
        sky_means = sky_dirs * rng.uniform(15.0, 30.0, size=(m, 1)) * scene_radius
        sky_quats = rng.normal(size=(m, 4))
        init_means = np.concatenate([init_means, sky_means])
        init_quats = np.concatenate([init_quats, sky_quats])
        init_log_scales = np.concatenate(
            [init_log_scales, np.log(rng.uniform(1.0, 2.5, size=(m, 3)) * scene_radius)]
        )
        init_opacity = np.concatenate([init_opacity, np.full(m, _logit(0.3))])
    total = init_means.shape[0]
    init_quats /= np.linalg.norm(init_quats, axis=1, keepdims=True) + 1e-12
    cloud = GaussianCloud(
        means=init_means.astype(np.float32),
        quats=init_quats.astype(np.float32),
        log_scales=init_log_scales.astype(np.float32),
        opacity_logits=init_opacity.astype(np.float32),
        features=rng.uniform(-cfg.feature_scale, cfg.feature_scale,
                             size=(total, FEATURE_DIM)).astype(np.float32),
    )

    truth = GroundTruth(
        gt_means=gt_means, gt_quats=gt_quats, gt_log_scales=gt_log_scales,
        gt_opacity_logits=gt_opacity_logits, gt_colors=gt_colors,
        scene_radius=scene_radius, background=cfg.background,
        bg_low=bg_low, bg_high=bg_high, bg_axis=bg_axis,
        conditions=conditions, gains=gains, biases=biases,
        occluder_rects=occluder_rects, occluder_colors=occluder_colors,
        occluder_masks=occluder_masks,
        base_images=np.stack(base_images) if base_images else np.zeros((0, height, width, 3), np.float32),
        test_gains=test_gains, test_biases=test_biases,
        test_base_images=np.stack(test_bases) if test_bases else np.zeros((0, height, width, 3), np.float32),
    )
    return SceneBundle(cloud=cloud, images=images, name=f"synthetic-{cfg.seed}",
                       test_images=test_images, truth=truth)
