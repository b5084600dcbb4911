"""Input validation helpers shared by public entry points."""

from __future__ import annotations

import numpy as np


def check_finite(array: np.ndarray, name: str) -> np.ndarray:
    array = np.asarray(array)
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite values")
    return array


def check_shape(array: np.ndarray, shape: tuple, name: str) -> np.ndarray:
    """Check an array shape; None entries match any extent."""
    array = np.asarray(array)
    if len(array.shape) != len(shape) or any(
        want is not None and got != want for got, want in zip(array.shape, shape)
    ):
        raise ValueError(f"{name} has shape {array.shape}, expected {shape}")
    return array


def check_rgb_image(array: np.ndarray, name: str = "image") -> np.ndarray:
    array = check_finite(array, name)
    if array.ndim != 3 or array.shape[2] != 3:
        raise ValueError(f"{name} must be (H, W, 3), got {array.shape}")
    if array.min() < -1e-6 or array.max() > 1.0 + 1e-6:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return array


def check_unit_interval(value: float, name: str) -> float:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return float(value)
