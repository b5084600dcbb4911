"""Transient handling: per-image loss statistics and the robust pixel mask.

The mask fraction k interpolates between Per_min and Per_max from L1 loss
statistics; the residual percentile threshold, the upper-region override,
and a 5x5 box blur with cutoff 0.4 produce the final inlier mask W.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imageops import box_filter_renormalized

PER_MIN_DEFAULT = 0.05
PER_MAX_DEFAULT = 0.40
UPPER_FRACTION = 0.4
BLUR_CUTOFF = 0.4
BLUR_SIZE = 5


@dataclass
class MaskState:
    """Running pre-mask L1 statistics for every training image.

    stats_scope selects what L1_min / L1_max mean when interpolating k:
    "image" keeps each image's own running extremes; "across-images" uses
    the extremes of the current per-image losses over the whole set, so
    images that stay lossy relative to the rest keep a high mask fraction.
    """

    n_images: int
    per_min: float = PER_MIN_DEFAULT
    per_max: float = PER_MAX_DEFAULT
    stats_scope: str = "across-images"
    l1_min: np.ndarray = field(init=False)
    l1_max: np.ndarray = field(init=False)
    l1_current: np.ndarray = field(init=False)
    seen: np.ndarray = field(init=False)

    def __post_init__(self):
        if not 0.0 <= self.per_min <= self.per_max <= 1.0:
            raise ValueError("need 0 <= per_min <= per_max <= 1")
        if self.stats_scope not in ("image", "across-images"):
            raise ValueError(f"unknown stats_scope {self.stats_scope!r}")
        self.l1_min = np.zeros(self.n_images, dtype=np.float64)
        self.l1_max = np.zeros(self.n_images, dtype=np.float64)
        self.l1_current = np.zeros(self.n_images, dtype=np.float64)
        self.seen = np.zeros(self.n_images, dtype=bool)


def update_stats(state: MaskState, image_index: int, l1_value: float) -> MaskState:
    """Record a pre-mask L1 observation for one image (in place)."""
    if not np.isfinite(l1_value) or l1_value < 0:
        raise ValueError(f"L1 value must be finite and >= 0, got {l1_value}")
    j = image_index
    if not state.seen[j]:
        state.l1_min[j] = state.l1_max[j] = l1_value
        state.seen[j] = True
    else:
        state.l1_min[j] = min(state.l1_min[j], l1_value)
        state.l1_max[j] = max(state.l1_max[j], l1_value)
    state.l1_current[j] = l1_value
    return state


def mask_fraction(state: MaskState, image_index: int) -> float:
    """Interpolated mask percentage k for one image.

    k = (L1_cur - L1_min) / (L1_max - L1_min) * (Per_max - Per_min) + Per_min,
    with k = Per_min when the statistics are degenerate (max == min).
    """
    j = image_index
    if not state.seen[j]:
        return state.per_min
    cur = state.l1_current[j]
    if state.stats_scope == "image":
        lo, hi = state.l1_min[j], state.l1_max[j]
    else:
        seen = state.seen
        lo = float(state.l1_current[seen].min())
        hi = float(state.l1_current[seen].max())
    if hi <= lo:
        return state.per_min
    frac = (cur - lo) / (hi - lo)
    return float(frac * (state.per_max - state.per_min) + state.per_min)


@dataclass
class RobustMask:
    """Final per-pixel training mask W (1 = learn, 0 = ignore)."""

    inlier: np.ndarray       # W, uint8
    pre_blur: np.ndarray     # omega-tilde before blurring, uint8
    threshold: float         # residual percentile threshold T_eps
    fraction: float          # k used


def build_mask(residual: np.ndarray, fraction: float,
               upper_fraction: float = UPPER_FRACTION) -> RobustMask:
    """Build W from a per-pixel residual buffer and mask fraction k.

    T_eps is the (1-k) quantile of the residuals (sort, lower
    interpolation; ties at the threshold count as inliers). Pixels in the
    upper upper_fraction of rows are always inliers. The inlier/outlier
    labels are blurred with a 5x5 box kernel averaging over the in-image
    part of each window (so an all-inlier field stays all-inlier at the
    borders) and cut at 0.4.
    """
    residual = np.asarray(residual, dtype=np.float64)
    if residual.ndim != 2:
        raise ValueError("residual buffer must be 2D")
    if np.any(residual < 0):
        raise ValueError("residuals must be >= 0")
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"mask fraction must lie in [0, 1], got {fraction}")
    h = residual.shape[0]
    flat = np.sort(residual, axis=None)
    idx = int(np.floor((1.0 - fraction) * (flat.size - 1)))
    threshold = flat[idx]
    rows = np.arange(h)[:, None]
    upper = rows <= upper_fraction * h
    pre_blur = ((residual <= threshold) | upper).astype(np.float64)
    inlier = box_filter_renormalized(pre_blur, BLUR_SIZE) >= BLUR_CUTOFF
    return RobustMask(
        inlier=inlier.astype(np.uint8),
        pre_blur=pre_blur.astype(np.uint8),
        threshold=float(threshold),
        fraction=float(fraction),
    )
