"""Scene data model and on-disk format.

A scene directory holds one JSON metadata document, one binary tensor blob
per Gaussian parameter class, and 8-bit sRGB PNG images (converted to
linear [0, 1] on load). Ground-truth fixtures from the synthetic generator
live in an optional truth/ subdirectory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .tensorio import read_tensor, write_tensor
from .validation import check_finite, check_rgb_image

FORMAT_VERSION = 1
FEATURE_DIM = 72
EMBED_DIM = 48
SH_DEGREE_COLOR = 3
SH_DEGREE_BACKGROUND = 2


class SceneLoadError(IOError):
    """Raised when a scene or checkpoint directory fails validation."""


# --------------------------------------------------------------------------
# sRGB transfer function (IEC 61966-2-1)
# --------------------------------------------------------------------------

def srgb_to_linear(srgb: np.ndarray) -> np.ndarray:
    srgb = np.asarray(srgb, dtype=np.float32)
    return np.where(srgb <= 0.04045, srgb / 12.92, ((srgb + 0.055) / 1.055) ** 2.4).astype(
        np.float32
    )


def linear_to_srgb(linear: np.ndarray) -> np.ndarray:
    linear = np.clip(np.asarray(linear, dtype=np.float32), 0.0, 1.0)
    return np.where(
        linear <= 0.0031308, linear * 12.92, 1.055 * np.maximum(linear, 1e-12) ** (1 / 2.4) - 0.055
    ).astype(np.float32)


def quantize_linear_image(linear: np.ndarray) -> np.ndarray:
    """Snap a linear image onto the 8-bit sRGB lattice (what PNG io preserves)."""
    codes = np.round(linear_to_srgb(linear) * 255.0).astype(np.uint8)
    return srgb_to_linear(codes.astype(np.float32) / 255.0)


def save_png(path: Path | str, linear: np.ndarray) -> None:
    codes = np.round(linear_to_srgb(linear) * 255.0).astype(np.uint8)
    Image.fromarray(codes, mode="RGB").save(path, format="PNG")


def load_png(path: Path | str) -> np.ndarray:
    with Image.open(path) as img:
        codes = np.asarray(img.convert("RGB"), dtype=np.float32)
    return srgb_to_linear(codes / 255.0)


# --------------------------------------------------------------------------
# Core types
# --------------------------------------------------------------------------

@dataclass
class GaussianCloud:
    """All per-Gaussian optimizable state.

    Covariance is kept factored (rotation quaternion + per-axis log scale),
    which guarantees positive semidefiniteness; opacity is stored as a logit.
    """

    means: np.ndarray          # (N, 3)
    quats: np.ndarray          # (N, 4), (w, x, y, z)
    log_scales: np.ndarray     # (N, 3)
    opacity_logits: np.ndarray  # (N,)
    features: np.ndarray       # (N, FEATURE_DIM)

    def __post_init__(self):
        self.validate()

    @property
    def count(self) -> int:
        return self.means.shape[0]

    def validate(self) -> None:
        n = self.means.shape[0]
        for name, arr, shape in [
            ("means", self.means, (n, 3)),
            ("quats", self.quats, (n, 4)),
            ("log_scales", self.log_scales, (n, 3)),
            ("opacity_logits", self.opacity_logits, (n,)),
            ("features", self.features, (n, self.features.shape[1] if self.features.ndim == 2 else -1)),
        ]:
            check_finite(arr, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
        if self.features.shape[1] != FEATURE_DIM:
            raise ValueError(
                f"features must have dimension {FEATURE_DIM}, got {self.features.shape[1]}"
            )
        norms = np.linalg.norm(self.quats, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("quaternions must be nonzero")

    def opacities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.opacity_logits))

    def astype(self, dtype) -> "GaussianCloud":
        return GaussianCloud(
            self.means.astype(dtype),
            self.quats.astype(dtype),
            self.log_scales.astype(dtype),
            self.opacity_logits.astype(dtype),
            self.features.astype(dtype),
        )

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.means.copy(),
            self.quats.copy(),
            self.log_scales.copy(),
            self.opacity_logits.copy(),
            self.features.copy(),
        )


@dataclass
class CameraView:
    """Pinhole camera: world-to-camera rigid transform plus intrinsics.

    Convention: camera x right, y down, z forward (OpenCV); a world point p
    maps to x_cam = R @ p + t, then u = fx*x/z + cx, v = fy*y/z + cy with
    (u, v) in pixels and pixel (row i, col j) centered at (j + 0.5, i + 0.5).
    """

    rotation: np.ndarray   # (3, 3) world-to-camera
    translation: np.ndarray  # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        check_finite(self.rotation, "rotation")
        check_finite(self.translation, "translation")
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("camera transform has wrong shape")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-9 or abs(np.linalg.det(self.rotation) - 1.0) > 1e-9:
            raise ValueError("camera rotation is not a proper orthonormal matrix")
        if self.fx <= 0 or self.fy <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError("camera intrinsics must be positive")

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def ray_directions(self, dtype=np.float32) -> np.ndarray:
        """Unit world-frame ray directions through every pixel center, (H, W, 3)."""
        ys = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        xs = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        gx, gy = np.meshgrid(xs, ys)
        dirs_cam = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
        dirs_world = dirs_cam @ self.rotation  # (R^T d) for row vectors
        dirs_world /= np.linalg.norm(dirs_world, axis=-1, keepdims=True)
        return dirs_world.astype(dtype)

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.reshape(-1).tolist(),
            "translation": self.translation.tolist(),
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraView":
        return cls(
            rotation=np.array(d["rotation"], dtype=np.float64).reshape(3, 3),
            translation=np.array(d["translation"], dtype=np.float64),
            fx=float(d["fx"]), fy=float(d["fy"]),
            cx=float(d["cx"]), cy=float(d["cy"]),
            width=int(d["width"]), height=int(d["height"]),
        )


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera (R, t) for a camera at eye looking at target."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    z = target - eye
    z = z / np.linalg.norm(z)
    x = np.cross(z, up)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise ValueError("view direction is parallel to the up vector")
    x = x / nx
    y = np.cross(z, x)
    rotation = np.stack([x, y, z], axis=0)
    return rotation, -rotation @ eye


@dataclass
class TrainImage:
    """One observed image with its camera and dense index."""

    index: int
    pixels: np.ndarray  # (H, W, 3) linear rgb in [0, 1]
    camera: CameraView

    def __post_init__(self):
        check_rgb_image(self.pixels, f"image {self.index}")
        if self.pixels.shape[:2] != (self.camera.height, self.camera.width):
            raise SceneLoadError(
                f"image {self.index}: buffer {self.pixels.shape[:2]} does not match "
                f"camera {(self.camera.height, self.camera.width)}"
            )


@dataclass
class SceneBundle:
    """A full scene: Gaussians, training images, optional held-out images."""

    cloud: GaussianCloud
    images: list[TrainImage]
    name: str = "scene"
    units: str = "scene"
    test_images: list[TrainImage] = field(default_factory=list)
    truth: "object | None" = None  # generator.GroundTruth when synthetic

    def __post_init__(self):
        for pos, img in enumerate(self.images):
            if img.index != pos:
                raise SceneLoadError(f"image indices must be dense, got {img.index} at {pos}")

    @property
    def n_images(self) -> int:
        return len(self.images)

    def scene_radius(self) -> float:
        center = self.cloud.means.mean(axis=0)
        return float(np.linalg.norm(self.cloud.means - center, axis=1).mean() + 1e-6)


# --------------------------------------------------------------------------
# Scene directory io
# --------------------------------------------------------------------------

_CLOUD_FILES = {
    "means": "gaussians_means.bin",
    "quats": "gaussians_quats.bin",
    "log_scales": "gaussians_log_scales.bin",
    "opacity_logits": "gaussians_opacity_logits.bin",
    "features": "gaussians_features.bin",
}


def save_scene(bundle: SceneBundle, path: Path | str) -> None:
    path = Path(path)
    (path / "images").mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "name": bundle.name,
        "units": bundle.units,
        "n_gaussians": bundle.cloud.count,
        "n_images": bundle.n_images,
        "n_test_images": len(bundle.test_images),
        "feature_dim": FEATURE_DIM,
        "embed_dim": EMBED_DIM,
        "sh_degree_color": SH_DEGREE_COLOR,
        "sh_degree_background": SH_DEGREE_BACKGROUND,
        "cameras": [img.camera.to_dict() for img in bundle.images],
        "test_cameras": [img.camera.to_dict() for img in bundle.test_images],
    }
    with open(path / "scene.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    for attr, fname in _CLOUD_FILES.items():
        write_tensor(path / fname, getattr(bundle.cloud, attr))
    for img in bundle.images:
        save_png(path / "images" / f"train_{img.index:05d}.png", img.pixels)
    for img in bundle.test_images:
        save_png(path / "images" / f"test_{img.index:05d}.png", img.pixels)
    if bundle.truth is not None:
        bundle.truth.save(path / "truth")


def load_scene(path: Path | str) -> SceneBundle:
    path = Path(path)
    meta_path = path / "scene.json"
    if not meta_path.exists():
        raise SceneLoadError(f"{path}: missing scene.json")
    with open(meta_path) as fh:
        meta = json.load(fh)
    if meta.get("format_version") != FORMAT_VERSION:
        raise SceneLoadError(
            f"{path}: format version {meta.get('format_version')} unsupported "
            f"(expected {FORMAT_VERSION})"
        )
    arrays = {}
    for attr, fname in _CLOUD_FILES.items():
        blob = path / fname
        if not blob.exists():
            raise SceneLoadError(f"{path}: missing tensor file {fname}")
        arrays[attr] = read_tensor(blob)
    try:
        cloud = GaussianCloud(**arrays)
    except ValueError as exc:
        raise SceneLoadError(f"{path}: invalid gaussian tensors: {exc}") from exc
    if cloud.count != meta["n_gaussians"]:
        raise SceneLoadError(
            f"{path}: metadata says {meta['n_gaussians']} gaussians, "
            f"tensors hold {cloud.count}"
        )

    def _load_images(prefix: str, cam_dicts: list) -> list[TrainImage]:
        images = []
        for j, cam_dict in enumerate(cam_dicts):
            camera = CameraView.from_dict(cam_dict)
            img_path = path / "images" / f"{prefix}_{j:05d}.png"
            if not img_path.exists():
                raise SceneLoadError(f"{path}: missing image file {img_path.name}")
            pixels = load_png(img_path)
            try:
                images.append(TrainImage(index=j, pixels=pixels, camera=camera))
            except SceneLoadError as exc:
                raise SceneLoadError(f"{path}: {exc}") from exc
        return images

    images = _load_images("train", meta["cameras"])
    test_images = _load_images("test", meta.get("test_cameras", []))
    truth = None
    if (path / "truth").exists():
        from .generator import GroundTruth

        truth = GroundTruth.load(path / "truth")
    return SceneBundle(
        cloud=cloud,
        images=images,
        name=meta["name"],
        units=meta.get("units", "scene"),
        test_images=test_images,
        truth=truth,
    )


def validate_scene(path: Path | str) -> dict:
    """Load a scene and report its headline counts (raises on any defect)."""
    bundle = load_scene(path)
    return {
        "name": bundle.name,
        "n_gaussians": bundle.cloud.count,
        "n_images": bundle.n_images,
        "n_test_images": len(bundle.test_images),
        "image_size": [bundle.images[0].camera.height, bundle.images[0].camera.width]
        if bundle.images
        else None,
    }
