"""End-to-end optimization: masked L1 + D-SSIM + alpha loss, Adam updates
for every parameter group, densification/pruning, and checkpointing.

One image per step, shuffled epoch order; deterministic for a fixed seed.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adam import Adam
from .appearance import AppearanceModel
from .background import BackgroundModel, alpha_loss, residual_mask
from .metrics import masked_dssim
from .pipeline import backward_view, forward_view
from .robustmask import MaskState, RobustMask, build_mask, mask_fraction, update_stats
from .scene import EMBED_DIM, FEATURE_DIM, GaussianCloud, SceneBundle
from .tensorio import read_tensor, write_tensor

CHECKPOINT_VERSION = 1


class TrainDivergenceError(RuntimeError):
    """Raised when the loss goes non-finite; names the offending buffers."""


@dataclass
class TrainConfig:
    iterations: int = 65000
    seed: int = 0
    lambda_ssim: float = 0.2
    lambda_alpha: float = 0.01
    per_min: float = 0.05
    per_max: float = 0.40
    mask_stats_scope: str = "across-images"
    use_background: bool = True
    use_mask: bool = True
    residual_threshold: float = 0.08
    alpha_loss_warmup: int = 1500
    mask_warmup: int = 500
    # per-group learning rates (splatting-ecosystem defaults)
    lr_means: float = 1.6e-4
    lr_means_final: float = 1.6e-6
    lr_scales: float = 5e-3
    lr_rotations: float = 1e-3
    lr_opacities: float = 5e-2
    lr_features: float = 2.5e-3
    lr_embeddings: float = 1e-3
    lr_mlps: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15
    # densification
    densify_interval: int = 100
    densify_start: int = 500
    densify_until_frac: float = 0.5
    densify_grad_threshold: float = 2e-4
    prune_opacity_threshold: float = 0.005
    max_gaussians: int = 200_000
    percent_dense: float = 0.01
    split_scale_shrink: float = 1.6
    split_children: int = 2
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("lr_means", "lr_scales", "lr_rotations", "lr_opacities",
                     "lr_features", "lr_embeddings", "lr_mlps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.densify_interval < 1:
            raise ValueError("densify_interval must be >= 1")

    def np_dtype(self):
        return np.dtype(self.dtype)


_CLOUD_GROUPS = ("means", "quats", "log_scales", "opacity_logits", "features")


def _group_rates(config: TrainConfig) -> dict[str, float]:
    rates = {
        "means": config.lr_means,
        "quats": config.lr_rotations,
        "log_scales": config.lr_scales,
        "opacity_logits": config.lr_opacities,
        "features": config.lr_features,
        "embeddings": config.lr_embeddings,
    }
    for prefix in ("app_mlp", "bg_mlp"):
        for pname in ("w1", "b1", "w2", "b2", "w3", "b3"):
            rates[f"{prefix}.{pname}"] = config.lr_mlps
    return rates


@dataclass
class StepReport:
    iteration: int
    image_index: int
    l1_premask: float
    l1_masked: float
    dssim: float
    alpha_loss: float
    total_loss: float
    mask_fraction: float
    masked_pixel_fraction: float
    n_gaussians: int

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self))


class TrainState:
    """Everything the training loop owns; checkpoint round-trips all of it."""

    def __init__(self, bundle: SceneBundle, config: TrainConfig):
        self.config = config
        self.bundle = bundle
        dtype = config.np_dtype()
        self.cloud = bundle.cloud.astype(dtype)
        self.rng = np.random.default_rng(config.seed)
        self.app_model = AppearanceModel(bundle.n_images, self.rng, dtype=dtype)
        self.bg_model = BackgroundModel(self.rng, dtype=dtype) if config.use_background else None
        self.mask_state = MaskState(
            n_images=bundle.n_images, per_min=config.per_min, per_max=config.per_max,
            stats_scope=config.mask_stats_scope,
        )
        self.adam = Adam(_group_rates(config), beta1=config.adam_beta1,
                         beta2=config.adam_beta2, eps=config.adam_eps)
        self.iteration = 0
        self.grad_accum = np.zeros(self.cloud.count, dtype=np.float64)
        self.visible_count = np.zeros(self.cloud.count, dtype=np.int64)
        self.epoch_perm = np.zeros(0, dtype=np.int64)
        self.epoch_pos = 0
        centers = np.stack([img.camera.center() for img in bundle.images])
        self.scene_extent = float(
            np.linalg.norm(centers - centers.mean(axis=0), axis=1).max() + 1e-6
        )

    # -- scheduling ---------------------------------------------------------

    def next_image_index(self) -> int:
        if self.epoch_pos >= len(self.epoch_perm):
            self.epoch_perm = self.rng.permutation(self.bundle.n_images)
            self.epoch_pos = 0
        j = int(self.epoch_perm[self.epoch_pos])
        self.epoch_pos += 1
        return j

    def means_lr(self) -> float:
        cfg = self.config
        t = min(self.iteration / max(cfg.iterations, 1), 1.0)
        return float(
            cfg.lr_means * (cfg.lr_means_final / cfg.lr_means) ** t * self.scene_extent
        )


def _mask_for_step(state: TrainState, j: int, pred: np.ndarray,
                   gt: np.ndarray) -> tuple[np.ndarray, float]:
    cfg = state.config
    if not cfg.use_mask or state.iteration < cfg.mask_warmup:
        return np.ones(gt.shape[:2], dtype=np.uint8), 0.0
    k = mask_fraction(state.mask_state, j)
    residual = np.abs(pred.astype(np.float64) - gt.astype(np.float64)).mean(axis=2)
    mask: RobustMask = build_mask(residual, k)
    return mask.inlier, k


def train_step(state: TrainState, image_index: int | None = None) -> StepReport:
    """One optimization step on a single image."""
    cfg = state.config
    j = state.next_image_index() if image_index is None else image_index
    img = state.bundle.images[j]
    dtype = cfg.np_dtype()
    gt = img.pixels.astype(dtype)
    embedding = state.app_model.embeddings[j]

    vr = forward_view(state.cloud, state.app_model, state.bg_model, img.camera, embedding)
    pred = vr.image

    diff = pred.astype(np.float64) - gt.astype(np.float64)
    l1_pre = float(np.abs(diff).mean())
    update_stats(state.mask_state, j, l1_pre)

    inlier, k = _mask_for_step(state, j, pred, gt)
    n_in = int(inlier.sum())
    if n_in:
        l1_masked = float((np.abs(diff).mean(axis=2) * inlier).sum() / n_in)
        d_l1 = np.sign(diff) * inlier[..., None] / (3.0 * n_in)
    else:
        l1_masked, d_l1 = 0.0, np.zeros_like(diff)

    dssim_val, d_dssim = masked_dssim(pred, gt, inlier)

    la_val = 0.0
    d_alpha = None
    if state.bg_model is not None and state.iteration >= cfg.alpha_loss_warmup:
        rm = residual_mask(gt, vr.bg.rgb, threshold=cfg.residual_threshold)
        la_val, d_alpha = alpha_loss(vr.render.alpha, rm.selected, cfg.lambda_alpha)
        d_alpha = d_alpha.astype(dtype)

    total = (1.0 - cfg.lambda_ssim) * l1_masked + cfg.lambda_ssim * dssim_val + la_val
    if not np.isfinite(total):
        bad = [name for name, val in
               [("l1", l1_masked), ("dssim", dssim_val), ("alpha_loss", la_val)]
               if not np.isfinite(val)]
        raise TrainDivergenceError(
            f"non-finite loss at iteration {state.iteration} on image {j}: {bad}"
        )

    d_image = ((1.0 - cfg.lambda_ssim) * d_l1 + cfg.lambda_ssim * d_dssim).astype(dtype)
    grads = backward_view(vr, state.app_model, state.bg_model, d_image, d_alpha)

    visible = grads.pop("visible")
    state.grad_accum[visible] += grads.pop("screen_grad_norm")[visible]
    state.visible_count[visible] += 1

    emb_grad = np.zeros_like(state.app_model.embeddings)
    emb_grad[j] = grads.pop("embedding")

    params = {name: getattr(state.cloud, name) for name in _CLOUD_GROUPS}
    params["embeddings"] = state.app_model.embeddings
    grads["embeddings"] = emb_grad
    for pname, arr in state.app_model.mlp.parameters().items():
        params[f"app_mlp.{pname}"] = arr
    if state.bg_model is not None:
        for pname, arr in state.bg_model.mlp.parameters().items():
            params[f"bg_mlp.{pname}"] = arr
    state.adam.step(params, grads, lr_overrides={"means": state.means_lr()})
    state.app_model.bump_version()

    state.iteration += 1
    return StepReport(
        iteration=state.iteration,
        image_index=j,
        l1_premask=l1_pre,
        l1_masked=l1_masked,
        dssim=float(dssim_val),
        alpha_loss=float(la_val),
        total_loss=float(total),
        mask_fraction=float(k),
        masked_pixel_fraction=float(1.0 - inlier.mean()),
        n_gaussians=state.cloud.count,
    )


# --------------------------------------------------------------------------
# Densification and pruning
# --------------------------------------------------------------------------

def densify_and_prune(state: TrainState) -> dict:
    """Clone small / split large high-gradient Gaussians, prune transparent
    ones, keep Adam moments and accumulators aligned."""
    cfg = state.config
    cloud = state.cloud
    n = cloud.count
    counts = np.maximum(state.visible_count, 1)
    avg_grad = state.grad_accum / counts

    opacities = cloud.opacities()
    keep = opacities >= cfg.prune_opacity_threshold

    grow = (avg_grad > cfg.densify_grad_threshold) & keep
    sizes = np.exp(cloud.log_scales).max(axis=1)
    small = sizes <= cfg.percent_dense * state.scene_extent
    clone_ids = np.flatnonzero(grow & small)
    split_ids = np.flatnonzero(grow & ~small)

    projected = int(keep.sum()) + len(clone_ids) + cfg.split_children * len(split_ids)
    warned = False
    if projected > cfg.max_gaussians:
        # prune-first already applied; trim growth candidates by gradient rank
        warned = True
        budget = max(cfg.max_gaussians - int(keep.sum()), 0)
        ranked = sorted(
            [(avg_grad[g], 0, g) for g in clone_ids]
            + [(avg_grad[g], 1, g) for g in split_ids],
            reverse=True,
        )
        chosen_clone, chosen_split, used = [], [], 0
        for _, kind, g in ranked:
            cost = 1 if kind == 0 else cfg.split_children
            if used + cost > budget:
                continue
            (chosen_clone if kind == 0 else chosen_split).append(g)
            used += cost
        clone_ids = np.asarray(chosen_clone, dtype=np.int64)
        split_ids = np.asarray(chosen_split, dtype=np.int64)

    keep[split_ids] = False  # split parents are replaced by their children

    new_parts = {name: [getattr(cloud, name)[clone_ids]] for name in _CLOUD_GROUPS}
    if len(split_ids):
        from .rasterizer import quat_to_rotation

        rep = np.repeat(split_ids, cfg.split_children)
        rot, _, _ = quat_to_rotation(cloud.quats[split_ids])
        rot = np.repeat(rot, cfg.split_children, axis=0)
        scales = np.exp(cloud.log_scales[rep])
        local = state.rng.normal(size=(len(rep), 3)) * scales
        offsets = np.einsum("nab,nb->na", rot, local).astype(cloud.means.dtype)
        new_parts["means"].append(cloud.means[rep] + offsets)
        new_parts["quats"].append(cloud.quats[rep])
        shrink = np.asarray(np.log(cfg.split_scale_shrink), dtype=cloud.log_scales.dtype)
        new_parts["log_scales"].append(cloud.log_scales[rep] - shrink)
        new_parts["opacity_logits"].append(cloud.opacity_logits[rep])
        new_parts["features"].append(cloud.features[rep])

    extra = sum(part.shape[0] for part in new_parts["means"])
    arrays = {}
    for name in _CLOUD_GROUPS:
        arrays[name] = np.concatenate([getattr(cloud, name)[keep]] + new_parts[name], axis=0)
    state.cloud = GaussianCloud(**arrays)
    for name in _CLOUD_GROUPS:
        state.adam.resize_group(name, keep=keep, extra_rows=extra)
    state.grad_accum = np.zeros(state.cloud.count, dtype=np.float64)
    state.visible_count = np.zeros(state.cloud.count, dtype=np.int64)
    state.app_model.bump_version()
    return {
        "cloned": int(len(clone_ids)),
        "split": int(len(split_ids)),
        "pruned": int(n - int(keep.sum()) - len(split_ids)),
        "n_gaussians": state.cloud.count,
        "capped": warned,
    }


def densify_due(state: TrainState) -> bool:
    cfg = state.config
    if state.iteration < cfg.densify_start:
        return False
    if state.iteration > cfg.densify_until_frac * cfg.iterations:
        return False
    return state.iteration % cfg.densify_interval == 0


def train(state: TrainState, n_steps: int | None = None,
          report_cb=None) -> list[StepReport]:
    """Drive training for n_steps (default: up to config.iterations)."""
    reports = []
    cfg = state.config
    remaining = cfg.iterations - state.iteration if n_steps is None else n_steps
    for _ in range(max(remaining, 0)):
        report = train_step(state)
        if densify_due(state):
            densify_and_prune(state)
        reports.append(report)
        if report_cb is not None:
            report_cb(report)
    return reports


# --------------------------------------------------------------------------
# Checkpointing
# --------------------------------------------------------------------------

def save_checkpoint(state: TrainState, path: Path | str,
                    scene_path: str | None = None) -> None:
    """Write every training-state field; load_checkpoint is its inverse."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    for name in _CLOUD_GROUPS:
        arrays[f"cloud_{name}"] = getattr(state.cloud, name)
    arrays["embeddings"] = state.app_model.embeddings
    for pname, arr in state.app_model.mlp.parameters().items():
        arrays[f"app_mlp_{pname}"] = arr
    if state.bg_model is not None:
        for pname, arr in state.bg_model.mlp.parameters().items():
            arrays[f"bg_mlp_{pname}"] = arr
    arrays["grad_accum"] = state.grad_accum
    arrays["visible_count"] = state.visible_count
    arrays["epoch_perm"] = state.epoch_perm
    arrays["mask_l1_min"] = state.mask_state.l1_min
    arrays["mask_l1_max"] = state.mask_state.l1_max
    arrays["mask_l1_current"] = state.mask_state.l1_current
    arrays["mask_seen"] = state.mask_state.seen.astype(np.uint8)
    for key, arr in state.adam.state_arrays().items():
        arrays[key] = arr
    for key, arr in arrays.items():
        write_tensor(path / f"{key}.bin", arr)
    meta = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "iteration": state.iteration,
        "config": dataclasses.asdict(state.config),
        "adam_step_count": state.adam.step_count,
        "epoch_pos": state.epoch_pos,
        "rng_state": _encode_rng(state.rng),
        "n_images": state.bundle.n_images,
        "n_gaussians": state.cloud.count,
        "feature_dim": FEATURE_DIM,
        "embed_dim": EMBED_DIM,
        "scene_extent": state.scene_extent,
        "scene_name": state.bundle.name,
        "scene_path": scene_path,
        "has_background": state.bg_model is not None,
        "array_names": sorted(arrays.keys()),
    }
    with open(path / "checkpoint.json", "w") as fh:
        json.dump(meta, fh, indent=2)


def _encode_rng(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "state": str(st["state"]["state"]),
        "inc": str(st["state"]["inc"]),
        "has_uint32": st["has_uint32"],
        "uinteger": st["uinteger"],
    }


def _decode_rng(d: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": d["bit_generator"],
        "state": {"state": int(d["state"]), "inc": int(d["inc"])},
        "has_uint32": d["has_uint32"],
        "uinteger": d["uinteger"],
    }
    return rng


def read_checkpoint_meta(path: Path | str) -> dict:
    path = Path(path)
    meta_file = path / "checkpoint.json"
    if not meta_file.exists():
        raise IOError(f"{path}: missing checkpoint.json")
    with open(meta_file) as fh:
        meta = json.load(fh)
    if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise IOError(
            f"{path}: checkpoint version {meta.get('checkpoint_version')} unsupported"
        )
    return meta


def load_checkpoint(path: Path | str, bundle: SceneBundle) -> TrainState:
    """Rebuild a TrainState exactly as saved (given the matching scene)."""
    path = Path(path)
    meta = read_checkpoint_meta(path)
    if meta["feature_dim"] != FEATURE_DIM or meta["embed_dim"] != EMBED_DIM:
        raise IOError(
            f"{path}: dimension mismatch (features {meta['feature_dim']}, "
            f"embeddings {meta['embed_dim']}; this build expects "
            f"{FEATURE_DIM}/{EMBED_DIM})"
        )
    if meta["n_images"] != bundle.n_images:
        raise IOError(
            f"{path}: checkpoint was trained on {meta['n_images']} images, "
            f"scene has {bundle.n_images}"
        )
    arrays = {name: read_tensor(path / f"{name}.bin") for name in meta["array_names"]}
    config = TrainConfig(**meta["config"])
    state = TrainState.__new__(TrainState)
    state.config = config
    state.bundle = bundle
    state.cloud = GaussianCloud(
        **{name: arrays[f"cloud_{name}"] for name in _CLOUD_GROUPS}
    )
    state.rng = _decode_rng(meta["rng_state"])
    dtype = config.np_dtype()
    throwaway = np.random.default_rng(0)
    state.app_model = AppearanceModel(meta["n_images"], throwaway, dtype=dtype)
    state.app_model.embeddings = arrays["embeddings"].copy()
    state.app_model.mlp.set_parameters(
        {p: arrays[f"app_mlp_{p}"] for p in state.app_model.mlp.PARAM_NAMES}
    )
    if meta["has_background"]:
        state.bg_model = BackgroundModel(throwaway, dtype=dtype)
        state.bg_model.mlp.set_parameters(
            {p: arrays[f"bg_mlp_{p}"] for p in state.bg_model.mlp.PARAM_NAMES}
        )
    else:
        state.bg_model = None
    state.mask_state = MaskState(
        n_images=meta["n_images"], per_min=config.per_min, per_max=config.per_max,
        stats_scope=config.mask_stats_scope,
    )
    state.mask_state.l1_min = arrays["mask_l1_min"].copy()
    state.mask_state.l1_max = arrays["mask_l1_max"].copy()
    state.mask_state.l1_current = arrays["mask_l1_current"].copy()
    state.mask_state.seen = arrays["mask_seen"].astype(bool)
    state.adam = Adam(_group_rates(config), beta1=config.adam_beta1,
                      beta2=config.adam_beta2, eps=config.adam_eps)
    state.adam.load_state_arrays(arrays, meta["adam_step_count"])
    state.iteration = meta["iteration"]
    state.grad_accum = arrays["grad_accum"].copy()
    state.visible_count = arrays["visible_count"].copy()
    state.epoch_perm = arrays["epoch_perm"].copy()
    state.epoch_pos = meta["epoch_pos"]
    state.scene_extent = meta["scene_extent"]
    return state
