"""Differentiable forward rendering of a Gaussian cloud and its exact
backward pass.

Semantics shared by the tiled renderer and the brute-force oracle:
  - a Gaussian influences exactly the pixels inside its integer support
    rectangle (derived from the 3-sigma extent of the 2D covariance);
  - sigma_i = min(opacity_i * exp(-0.5 d^T inv(cov2d) d), 0.999);
  - pixels blend front to back in (depth, index) order and stop once
    transmittance falls to 1e-4.
With identical support and ordering rules the tiled path and the oracle
perform the same arithmetic, so they agree to float rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene import CameraView, GaussianCloud

TILE_SIZE = 16
BLUR_FLOOR = 0.3          # px^2 added to the 2D covariance diagonal
SIGMA_CLAMP = 0.999
TRANSMITTANCE_STOP = 1e-4
NEAR_EPSILON = 1e-2
SUPPORT_SIGMAS = 3.0


def quat_to_rotation(quats: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rotation matrices from (possibly unnormalized) quaternions (w, x, y, z).

    Returns (rotations (N,3,3), unit quats, input norms).
    """
    quats = np.asarray(quats)
    norms = np.linalg.norm(quats, axis=-1)
    qhat = quats / norms[..., None]
    w, x, y, z = qhat[..., 0], qhat[..., 1], qhat[..., 2], qhat[..., 3]
    rot = np.empty(quats.shape[:-1] + (3, 3), dtype=quats.dtype)
    rot[..., 0, 0] = 1 - 2 * (y * y + z * z)
    rot[..., 0, 1] = 2 * (x * y - w * z)
    rot[..., 0, 2] = 2 * (x * z + w * y)
    rot[..., 1, 0] = 2 * (x * y + w * z)
    rot[..., 1, 1] = 1 - 2 * (x * x + z * z)
    rot[..., 1, 2] = 2 * (y * z - w * x)
    rot[..., 2, 0] = 2 * (x * z - w * y)
    rot[..., 2, 1] = 2 * (y * z + w * x)
    rot[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return rot, qhat, norms


def _rotation_quat_partials(qhat: np.ndarray) -> np.ndarray:
    """d(rotation)/d(unit quaternion): (N, 4, 3, 3)."""
    w, x, y, z = qhat[..., 0], qhat[..., 1], qhat[..., 2], qhat[..., 3]
    zero = np.zeros_like(w)
    parts = np.empty(qhat.shape[:-1] + (4, 3, 3), dtype=qhat.dtype)
    parts[..., 0, :, :] = 2 * np.stack(
        [zero, -z, y, z, zero, -x, -y, x, zero], axis=-1
    ).reshape(qhat.shape[:-1] + (3, 3))
    parts[..., 1, :, :] = 2 * np.stack(
        [zero, y, z, y, -2 * x, -w, z, w, -2 * x], axis=-1
    ).reshape(qhat.shape[:-1] + (3, 3))
    parts[..., 2, :, :] = 2 * np.stack(
        [-2 * y, x, w, x, zero, z, -w, z, -2 * y], axis=-1
    ).reshape(qhat.shape[:-1] + (3, 3))
    parts[..., 3, :, :] = 2 * np.stack(
        [-2 * z, -w, x, w, -2 * z, y, x, y, zero], axis=-1
    ).reshape(qhat.shape[:-1] + (3, 3))
    return parts


def compute_cov3d(quats: np.ndarray, log_scales: np.ndarray) -> np.ndarray:
    """3D covariance R diag(exp(2 s)) R^T from factored parameters."""
    rot, _, _ = quat_to_rotation(np.atleast_2d(np.asarray(quats)))
    scales = np.exp(np.atleast_2d(np.asarray(log_scales)))
    n_mat = rot * scales[:, None, :]
    cov = n_mat @ np.swapaxes(n_mat, -1, -2)
    return cov[0] if np.asarray(quats).ndim == 1 else cov


def compute_cov3d_backward(
    quats: np.ndarray, log_scales: np.ndarray, d_cov: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of a loss w.r.t. quaternions and log scales given d(loss)/d(cov)."""
    rot, qhat, norms = quat_to_rotation(quats)
    scales = np.exp(log_scales)
    n_mat = rot * scales[:, None, :]
    d_sym = d_cov + np.swapaxes(d_cov, -1, -2)
    d_n = d_sym @ n_mat
    d_rot_scaled = np.einsum("nba,nbk->nak", rot, d_n)  # R^T dN
    d_log_scales = np.einsum("nkk->nk", d_rot_scaled) * scales
    d_rot = d_n * scales[:, None, :]
    partials = _rotation_quat_partials(qhat)
    d_qhat = np.einsum("nab,ncab->nc", d_rot, partials)
    d_quats = (d_qhat - qhat * np.einsum("nc,nc->n", qhat, d_qhat)[:, None]) / norms[:, None]
    return d_quats, d_log_scales


@dataclass
class ProjectedGaussians:
    """Screen-space Gaussians plus everything the backward pass reuses."""

    camera: CameraView
    valid: np.ndarray        # (N,) bool, in front of camera and on screen
    means2d: np.ndarray      # (N, 2) pixel coords (u, v)
    inv_cov2d: np.ndarray    # (N, 2, 2)
    cov2d: np.ndarray        # (N, 2, 2) after blur floor
    depth: np.ndarray        # (N,) view-space z
    rect: np.ndarray         # (N, 4) int support rect (x0, x1, y0, y1)
    opacity: np.ndarray      # (N,) sigmoid of logits
    # retained intermediates
    t_view: np.ndarray       # (N, 3)
    m3: np.ndarray           # (N, 2, 3) projection Jacobian times rotation
    cov3d: np.ndarray        # (N, 3, 3)
    quats: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    rot_wc: np.ndarray       # (3, 3) camera rotation in working dtype

    @property
    def count(self) -> int:
        return self.valid.shape[0]


def project_gaussians(
    cloud: GaussianCloud,
    camera: CameraView,
    dtype=None,
    near: float = NEAR_EPSILON,
    blur_floor: float = BLUR_FLOOR,
) -> ProjectedGaussians:
    """Project all Gaussians of a cloud into a camera.

    Behind-camera or off-screen Gaussians are culled (valid=False), not an
    error. The blur floor is added to the projected covariance diagonal.
    """
    dtype = np.dtype(dtype or cloud.means.dtype)
    means = cloud.means.astype(dtype, copy=False)
    quats = cloud.quats.astype(dtype, copy=False)
    log_scales = cloud.log_scales.astype(dtype, copy=False)
    logits = cloud.opacity_logits.astype(dtype, copy=False)

    rot = camera.rotation.astype(dtype)
    trans = camera.translation.astype(dtype)
    fx, fy, cx, cy = (dtype.type(v) for v in (camera.fx, camera.fy, camera.cx, camera.cy))
    w_px, h_px = camera.width, camera.height

    t_view = means @ rot.T + trans
    tz = t_view[:, 2]
    in_front = tz > near
    tz_safe = np.where(in_front, tz, 1.0)

    u = fx * t_view[:, 0] / tz_safe + cx
    v = fy * t_view[:, 1] / tz_safe + cy
    means2d = np.stack([u, v], axis=1)

    cov3d = compute_cov3d(quats, log_scales)
    j00 = fx / tz_safe
    j02 = -fx * t_view[:, 0] / tz_safe**2
    j11 = fy / tz_safe
    j12 = -fy * t_view[:, 1] / tz_safe**2
    m3 = np.empty((means.shape[0], 2, 3), dtype=dtype)
    m3[:, 0, :] = j00[:, None] * rot[0] + j02[:, None] * rot[2]
    m3[:, 1, :] = j11[:, None] * rot[1] + j12[:, None] * rot[2]
    cov2d = np.einsum("nab,nbc,ndc->nad", m3, cov3d, m3)
    cov2d[:, 0, 0] += dtype.type(blur_floor)
    cov2d[:, 1, 1] += dtype.type(blur_floor)

    a, b, d = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * d - b * b
    det_safe = np.where(det > 0, det, 1.0)
    inv_cov = np.empty_like(cov2d)
    inv_cov[:, 0, 0] = d / det_safe
    inv_cov[:, 0, 1] = -b / det_safe
    inv_cov[:, 1, 0] = -b / det_safe
    inv_cov[:, 1, 1] = a / det_safe

    mid = 0.5 * (a + d)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = np.ceil(SUPPORT_SIGMAS * np.sqrt(np.maximum(lam_max, 0.0)))

    x0 = np.clip(np.floor(u - radius), 0, w_px).astype(np.int64)
    x1 = np.clip(np.floor(u + radius) + 1, 0, w_px).astype(np.int64)
    y0 = np.clip(np.floor(v - radius), 0, h_px).astype(np.int64)
    y1 = np.clip(np.floor(v + radius) + 1, 0, h_px).astype(np.int64)
    rect = np.stack([x0, x1, y0, y1], axis=1)
    valid = in_front & (det > 0) & (x1 > x0) & (y1 > y0)

    return ProjectedGaussians(
        camera=camera,
        valid=valid,
        means2d=means2d,
        inv_cov2d=inv_cov,
        cov2d=cov2d,
        depth=tz,
        rect=rect,
        opacity=1.0 / (1.0 + np.exp(-logits)),
        t_view=t_view,
        m3=m3,
        cov3d=cov3d,
        quats=quats,
        log_scales=log_scales,
        opacity_logits=logits,
        rot_wc=rot,
    )


@dataclass
class RenderOutput:
    """Forward render result plus buffers retained for the backward pass."""

    rgb: np.ndarray          # (H, W, 3)
    alpha: np.ndarray        # (H, W)
    transmittance: np.ndarray  # (H, W) final T per pixel
    projected: ProjectedGaussians = field(repr=False)
    colors: np.ndarray = field(repr=False)      # (N, 3)
    draw_order: np.ndarray = field(repr=False)  # valid ids, depth sorted
    tile_bins: dict = field(repr=False)         # (ty, tx) -> positions in draw_order
    tile_size: int = TILE_SIZE
    tile_data: dict | None = field(repr=False, default=None)  # retained blends


def _draw_order(proj: ProjectedGaussians) -> np.ndarray:
    ids = np.flatnonzero(proj.valid)
    return ids[np.argsort(proj.depth[ids], kind="stable")]


def _bin_to_tiles(proj: ProjectedGaussians, order: np.ndarray, tile: int) -> dict:
    bins: dict[tuple[int, int], list[int]] = {}
    rect = proj.rect
    for pos, g in enumerate(order):
        x0, x1, y0, y1 = rect[g]
        for ty in range(y0 // tile, (y1 - 1) // tile + 1):
            for tx in range(x0 // tile, (x1 - 1) // tile + 1):
                bins.setdefault((ty, tx), []).append(pos)
    return {key: np.asarray(val, dtype=np.int64) for key, val in bins.items()}


def _tile_blend(proj, order, positions, ys, xs):
    """Compute per-tile blending tensors shared by forward and backward."""
    ids = order[positions]
    dtype = proj.means2d.dtype
    ux = xs.astype(dtype) + dtype.type(0.5)
    vy = ys.astype(dtype) + dtype.type(0.5)
    mu = proj.means2d[ids]
    k, ny, nx = len(ids), len(ys), len(xs)
    dx = np.broadcast_to((ux[None, :] - mu[:, 0, None])[:, None, :], (k, ny, nx)).reshape(k, -1)
    dy = np.broadcast_to((vy[None, :] - mu[:, 1, None])[:, :, None], (k, ny, nx)).reshape(k, -1)
    inv = proj.inv_cov2d[ids]
    ex = inv[:, 0, 0, None] * dx + inv[:, 0, 1, None] * dy
    ey = inv[:, 1, 0, None] * dx + inv[:, 1, 1, None] * dy
    quad = 0.5 * (dx * ex + dy * ey)
    falloff = np.exp(-quad)
    rect = proj.rect[ids]
    gx = xs[None, None, :]
    gy = ys[None, :, None]
    support = (
        (gx >= rect[:, 0, None, None])
        & (gx < rect[:, 1, None, None])
        & (gy >= rect[:, 2, None, None])
        & (gy < rect[:, 3, None, None])
    ).reshape(len(ids), -1)
    sigma_raw = proj.opacity[ids][:, None] * falloff * support
    sigma = np.minimum(sigma_raw, dtype.type(SIGMA_CLAMP))
    trans_inc = np.cumprod(1.0 - sigma, axis=0)
    trans_exc = np.empty_like(trans_inc)
    trans_exc[0] = 1.0
    trans_exc[1:] = trans_inc[:-1]
    included = trans_exc > TRANSMITTANCE_STOP
    weight = sigma * trans_exc * included
    if included.all():
        trans_end = trans_inc[-1]
    else:
        trans_end = np.cumprod(1.0 - sigma * included, axis=0)[-1]
    return ids, dx, dy, ex, ey, falloff, support, sigma_raw, sigma, trans_exc, included, weight, trans_end


def render_forward(
    proj: ProjectedGaussians, colors: np.ndarray, tile_size: int = TILE_SIZE,
    retain: bool = False,
) -> RenderOutput:
    """Tile-based front-to-back alpha blending of projected Gaussians.

    Colors are per-Gaussian rgb (already view-conditioned). Deterministic:
    tiles are visited row-major and blending order is fixed by (depth, index).
    With retain=True per-tile blend tensors are kept for the backward pass.
    """
    camera = proj.camera
    dtype = proj.means2d.dtype
    colors = np.asarray(colors, dtype=dtype)
    h_px, w_px = camera.height, camera.width
    rgb = np.zeros((h_px, w_px, 3), dtype=dtype)
    trans = np.ones((h_px, w_px), dtype=dtype)
    order = _draw_order(proj)
    bins = _bin_to_tiles(proj, order, tile_size)
    tile_data = {} if retain else None
    for (ty, tx), positions in sorted(bins.items()):
        ys = np.arange(ty * tile_size, min((ty + 1) * tile_size, h_px))
        xs = np.arange(tx * tile_size, min((tx + 1) * tile_size, w_px))
        blend = _tile_blend(proj, order, positions, ys, xs)
        ids, weight, trans_end = blend[0], blend[-2], blend[-1]
        tile_rgb = weight.T @ colors[ids]
        rgb[np.ix_(ys, xs)] = tile_rgb.reshape(len(ys), len(xs), 3)
        trans[np.ix_(ys, xs)] = trans_end.reshape(len(ys), len(xs))
        if retain:
            tile_data[(ty, tx)] = blend
    alpha = 1.0 - trans
    return RenderOutput(
        rgb=rgb,
        alpha=alpha,
        transmittance=trans,
        projected=proj,
        colors=colors,
        draw_order=order,
        tile_bins=bins,
        tile_size=tile_size,
        tile_data=tile_data,
    )


def render_backward(
    out: RenderOutput, d_rgb: np.ndarray, d_alpha: np.ndarray | None = None
) -> dict:
    """Exact reverse-mode gradients of the rendered image and alpha buffer.

    Returns gradients for means, quats, log_scales, opacity_logits and
    per-Gaussian colors, plus the screen-space positional gradient norms
    used by densification. Per-Gaussian accumulation happens in fixed tile
    order, so results are deterministic.
    """
    proj = out.projected
    camera = proj.camera
    dtype = proj.means2d.dtype
    n = proj.count
    d_rgb = np.asarray(d_rgb, dtype=dtype)
    if d_alpha is None:
        d_alpha = np.zeros(out.alpha.shape, dtype=dtype)
    else:
        d_alpha = np.asarray(d_alpha, dtype=dtype)
    if d_rgb.shape != out.rgb.shape or d_alpha.shape != out.alpha.shape:
        raise ValueError("upstream gradient buffers do not match render buffers")

    d_mean2d = np.zeros((n, 2), dtype=dtype)
    d_inv_cov = np.zeros((n, 2, 2), dtype=dtype)
    d_opacity = np.zeros(n, dtype=dtype)
    d_colors = np.zeros((n, 3), dtype=dtype)
    visible = np.zeros(n, dtype=bool)

    tile = out.tile_size
    for (ty, tx), positions in sorted(out.tile_bins.items()):
        ys = np.arange(ty * tile, min((ty + 1) * tile, camera.height))
        xs = np.arange(tx * tile, min((tx + 1) * tile, camera.width))
        if out.tile_data is not None:
            blend = out.tile_data[(ty, tx)]
        else:
            blend = _tile_blend(proj, out.draw_order, positions, ys, xs)
        (
            ids, dx, dy, ex, ey, falloff, support, sigma_raw, sigma,
            trans_exc, included, weight, trans_end,
        ) = blend
        dc_tile = d_rgb[np.ix_(ys, xs)].reshape(-1, 3)
        da_tile = d_alpha[np.ix_(ys, xs)].reshape(-1)

        d_colors[ids] += weight @ dc_tile
        visible[ids] = True

        dw = out.colors[ids] @ dc_tile.T
        contrib = dw * weight
        suffix = np.flip(np.cumsum(np.flip(contrib, 0), axis=0), 0) - contrib
        one_minus = 1.0 - sigma
        # alpha = 1 - T_end and dT_end/dsigma_i = -T_end/(1-sigma_i) on the
        # included prefix; color path uses the suffix of later contributions.
        d_sigma = included * (
            dw * trans_exc - (suffix - da_tile[None, :] * trans_end[None, :]) / one_minus
        )
        gate = support & (sigma_raw < SIGMA_CLAMP)
        d_sigma_gated = d_sigma * gate
        d_opacity[ids] += (d_sigma_gated * falloff).sum(axis=1)
        d_quad = -falloff * d_sigma_gated * proj.opacity[ids][:, None]
        d_mean2d[ids, 0] += -(d_quad * ex).sum(axis=1)
        d_mean2d[ids, 1] += -(d_quad * ey).sum(axis=1)
        d_inv_cov[ids, 0, 0] += 0.5 * (d_quad * dx * dx).sum(axis=1)
        off_diag = 0.5 * (d_quad * dx * dy).sum(axis=1)
        d_inv_cov[ids, 0, 1] += off_diag
        d_inv_cov[ids, 1, 0] += off_diag
        d_inv_cov[ids, 1, 1] += 0.5 * (d_quad * dy * dy).sum(axis=1)

    grads = _projection_backward(proj, d_mean2d, d_inv_cov, d_opacity)
    grads["colors"] = d_colors
    half_extent = np.array([camera.width / 2.0, camera.height / 2.0], dtype=dtype)
    grads["screen_grad_norm"] = np.linalg.norm(d_mean2d * half_extent, axis=1)
    grads["visible"] = visible
    return grads


def _projection_backward(proj, d_mean2d, d_inv_cov, d_opacity):
    dtype = proj.means2d.dtype
    n = proj.count
    rot = proj.rot_wc
    camera = proj.camera
    fx = dtype.type(camera.fx)
    fy = dtype.type(camera.fy)
    vmask = proj.valid

    d_means = np.zeros((n, 3), dtype=dtype)
    d_quats = np.zeros((n, 4), dtype=dtype)
    d_log_scales = np.zeros((n, 3), dtype=dtype)

    ids = np.flatnonzero(vmask)
    if ids.size:
        inv = proj.inv_cov2d[ids]
        d_inv = d_inv_cov[ids]
        d_cov2d = -np.einsum("nab,nbc,ncd->nad", inv, d_inv, inv)
        d_cov2d = 0.5 * (d_cov2d + np.swapaxes(d_cov2d, -1, -2))
        m3 = proj.m3[ids]
        cov3d = proj.cov3d[ids]
        d_cov3d = np.einsum("nba,nbc,ncd->nad", m3, d_cov2d, m3)
        d_m3 = 2.0 * np.einsum("nab,nbc,ncd->nad", d_cov2d, m3, cov3d)

        # m3 = J @ rot; only four J entries are structurally nonzero
        d_j = np.einsum("nac,bc->nab", d_m3, rot)  # (n, 2, 3) = dM3 @ rot^T
        t = proj.t_view[ids]
        tx_, ty_, tz_ = t[:, 0], t[:, 1], t[:, 2]
        du = d_mean2d[ids][:, 0]
        dv = d_mean2d[ids][:, 1]
        inv_z = 1.0 / tz_
        inv_z2 = inv_z * inv_z
        d_t = np.empty_like(t)
        d_t[:, 0] = d_j[:, 0, 2] * (-fx * inv_z2) + du * fx * inv_z
        d_t[:, 1] = d_j[:, 1, 2] * (-fy * inv_z2) + dv * fy * inv_z
        d_t[:, 2] = (
            d_j[:, 0, 0] * (-fx * inv_z2)
            + d_j[:, 1, 1] * (-fy * inv_z2)
            + d_j[:, 0, 2] * (2 * fx * tx_ * inv_z2 * inv_z)
            + d_j[:, 1, 2] * (2 * fy * ty_ * inv_z2 * inv_z)
            - du * fx * tx_ * inv_z2
            - dv * fy * ty_ * inv_z2
        )
        d_means[ids] = d_t @ rot
        dq, ds = compute_cov3d_backward(proj.quats[ids], proj.log_scales[ids], d_cov3d)
        d_quats[ids] = dq
        d_log_scales[ids] = ds

    opac = proj.opacity
    d_logits = d_opacity * opac * (1.0 - opac)
    return {
        "means": d_means,
        "quats": d_quats,
        "log_scales": d_log_scales,
        "opacity_logits": d_logits,
    }


def render_brute_force(proj: ProjectedGaussians, colors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reference renderer: global depth sort, no tiling, sequential blend.

    Shares only the projected inputs with the tiled path; blending is an
    explicit running-transmittance loop over Gaussians.
    """
    camera = proj.camera
    dtype = proj.means2d.dtype
    h_px, w_px = camera.height, camera.width
    colors = np.asarray(colors, dtype=dtype)
    ys, xs = np.meshgrid(np.arange(h_px), np.arange(w_px), indexing="ij")
    px = np.stack([xs + 0.5, ys + 0.5], axis=-1).astype(dtype).reshape(-1, 2)
    rgb = np.zeros((h_px * w_px, 3), dtype=dtype)
    trans = np.ones(h_px * w_px, dtype=dtype)
    cols_flat = xs.reshape(-1)
    rows_flat = ys.reshape(-1)
    for g in _draw_order(proj):
        x0, x1, y0, y1 = proj.rect[g]
        inside = (cols_flat >= x0) & (cols_flat < x1) & (rows_flat >= y0) & (rows_flat < y1)
        d = px - proj.means2d[g]
        quad = 0.5 * np.einsum("pa,ab,pb->p", d, proj.inv_cov2d[g], d)
        sigma = np.minimum(proj.opacity[g] * np.exp(-quad), dtype.type(SIGMA_CLAMP)) * inside
        active = trans > TRANSMITTANCE_STOP
        sigma = sigma * active
        rgb += (sigma * trans)[:, None] * colors[g]
        trans = trans * (1.0 - sigma)
    return rgb.reshape(h_px, w_px, 3), (1.0 - trans).reshape(h_px, w_px)


def render_cloud(
    cloud: GaussianCloud,
    colors: np.ndarray,
    camera: CameraView,
    dtype=None,
    tile_size: int = TILE_SIZE,
    retain: bool = False,
) -> RenderOutput:
    """Convenience wrapper: project then blend."""
    proj = project_gaussians(cloud, camera, dtype=dtype)
    return render_forward(proj, colors, tile_size=tile_size, retain=retain)
