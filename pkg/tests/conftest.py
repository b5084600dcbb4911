import numpy as np
import pytest

from wildsplat.scene import FEATURE_DIM, CameraView, GaussianCloud, look_at


def make_cloud(rng, n, dtype=np.float64, spread=0.6, opacity_range=(-1.0, 1.5)):
    """Random well-conditioned cloud for rasterizer/pipeline tests."""
    quats = rng.normal(size=(n, 4))
    return GaussianCloud(
        means=rng.uniform(-spread, spread, (n, 3)).astype(dtype),
        quats=quats.astype(dtype),
        log_scales=np.log(rng.uniform(0.05, 0.2, (n, 3))).astype(dtype),
        opacity_logits=rng.uniform(*opacity_range, n).astype(dtype),
        features=rng.uniform(-0.3, 0.3, (n, FEATURE_DIM)).astype(dtype),
    )


def make_camera(width=32, height=32, eye=(0.0, -2.5, 0.6), target=(0.0, 0.0, 0.0),
                focal_scale=1.2):
    rotation, translation = look_at(np.asarray(eye, dtype=float), np.asarray(target, dtype=float))
    return CameraView(rotation, translation, fx=focal_scale * width, fy=focal_scale * width,
                      cx=width / 2.0, cy=height / 2.0, width=width, height=height)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
