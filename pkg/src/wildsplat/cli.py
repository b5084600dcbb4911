"""Command-line interface: scene generation/validation, training,
evaluation, offline rendering, and the render service."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .evaluation import EMBED_FIT_ITERATIONS, evaluate
from .generator import GeneratorConfig, generate_synthetic_scene
from .scene import load_scene, save_png, save_scene, validate_scene
from .service import (
    AppearanceSpec,
    CameraSpec,
    RenderRequest,
    render_once,
    snapshot_from_checkpoint,
)
from .trainer import (
    TrainConfig,
    TrainState,
    densify_and_prune,
    densify_due,
    load_checkpoint,
    save_checkpoint,
    train_step,
)


@click.group()
def main():
    """In-the-wild Gaussian splatting at desk scale."""


@main.group()
def scene():
    """Synthetic scene generation and validation."""


@scene.command("gen")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--gaussians", type=int, default=500, show_default=True)
@click.option("--views", type=int, default=16, show_default=True)
@click.option("--appearances", type=int, default=3, show_default=True)
@click.option("--occluder-frac", type=float, default=0.0, show_default=True,
              help="occluder area fraction per occluded image")
@click.option("--occluder-images", type=float, default=1.0, show_default=True,
              help="fraction of images that receive an occluder")
@click.option("--poses", type=int, default=None, help="distinct poses (default: one per view)")
@click.option("--test-views", type=int, default=0, show_default=True)
@click.option("--sky-points", type=int, default=0, show_default=True,
              help="extra far-away initialization points")
@click.option("--size", type=str, default="64x64", show_default=True, help="HxW pixels")
@click.option("--background", type=click.Choice(["gradient", "none"]), default="gradient",
              show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def scene_gen(seed, gaussians, views, appearances, occluder_frac, occluder_images,
              poses, test_views, sky_points, size, background, out_dir):
    """Generate a synthetic scene with ground-truth labels."""
    h, w = (int(v) for v in size.lower().split("x"))
    config = GeneratorConfig(
        seed=seed, n_gaussians=gaussians, n_views=views, n_appearances=appearances,
        image_size=(h, w), n_poses=poses, n_test_views=test_views,
        occluder_frac=occluder_frac, occluder_image_frac=occluder_images,
        n_sky_points=sky_points, background=background,
    )
    bundle = generate_synthetic_scene(config)
    save_scene(bundle, out_dir)
    click.echo(f"wrote {bundle.cloud.count} gaussians, {bundle.n_images} train + "
               f"{len(bundle.test_images)} test images to {out_dir}")


@scene.command("validate")
@click.argument("scene_dir", type=click.Path(exists=True))
def scene_validate(scene_dir):
    """Load a scene directory and report its headline counts."""
    try:
        info = validate_scene(scene_dir)
    except Exception as exc:
        click.echo(f"INVALID: {exc}", err=True)
        sys.exit(1)
    click.echo(json.dumps(info))


@main.command("train")
@click.option("--scene", "scene_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--iters", type=int, default=2000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--per-min", type=float, default=0.05, show_default=True)
@click.option("--per-max", type=float, default=0.40, show_default=True)
@click.option("--lambda-alpha", type=float, default=0.01, show_default=True)
@click.option("--lambda-ssim", type=float, default=0.2, show_default=True)
@click.option("--no-bg", is_flag=True, help="disable the background model (ablation)")
@click.option("--no-mask", is_flag=True, help="disable the robust mask (ablation)")
@click.option("--mask-scope", type=click.Choice(["image", "across-images"]),
              default="across-images", show_default=True)
@click.option("--resume", "resume_ckpt", type=click.Path(exists=True), default=None)
@click.option("--checkpoint-every", type=int, default=0,
              help="also write intermediate checkpoints every N steps")
@click.option("--dump-masks", is_flag=True, help="write robust masks as PNGs")
@click.option("--log-every", type=int, default=100, show_default=True)
def train_cmd(scene_dir, out_dir, iters, seed, per_min, per_max, lambda_alpha,
              lambda_ssim, no_bg, no_mask, mask_scope, resume_ckpt,
              checkpoint_every, dump_masks, log_every):
    """Train on a scene; streams line-delimited step reports."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = load_scene(scene_dir)
    if resume_ckpt:
        state = load_checkpoint(resume_ckpt, bundle)
        state.config.iterations = iters
    else:
        config = TrainConfig(
            iterations=iters, seed=seed, per_min=per_min, per_max=per_max,
            lambda_alpha=lambda_alpha, lambda_ssim=lambda_ssim,
            use_background=not no_bg, use_mask=not no_mask,
            mask_stats_scope=mask_scope,
        )
        state = TrainState(bundle, config)

    mask_dir = out / "masks"
    if dump_masks:
        mask_dir.mkdir(exist_ok=True)
    log_path = out / "train_log.jsonl"
    with open(log_path, "a" if resume_ckpt else "w") as log:
        while state.iteration < state.config.iterations:
            report = train_step(state)
            if densify_due(state):
                densify_and_prune(state)
            log.write(report.to_json() + "\n")
            if dump_masks and state.config.use_mask:
                _dump_mask(state, report.image_index, mask_dir)
            if log_every and report.iteration % log_every == 0:
                click.echo(f"iter {report.iteration}  L1 {report.l1_premask:.4f}  "
                           f"loss {report.total_loss:.4f}  N {report.n_gaussians}")
            if checkpoint_every and report.iteration % checkpoint_every == 0:
                save_checkpoint(state, out / f"checkpoint_{report.iteration:06d}",
                                scene_path=str(Path(scene_dir).resolve()))
    save_checkpoint(state, out / "checkpoint", scene_path=str(Path(scene_dir).resolve()))
    click.echo(f"checkpoint written to {out / 'checkpoint'}")


def _dump_mask(state, image_index, mask_dir: Path):
    from .pipeline import forward_view
    from .robustmask import build_mask, mask_fraction

    img = state.bundle.images[image_index]
    vr = forward_view(state.cloud, state.app_model, state.bg_model, img.camera,
                      state.app_model.embeddings[image_index], keep=False)
    residual = np.abs(vr.image.astype(np.float64)
                      - img.pixels.astype(np.float64)).mean(axis=2)
    mask = build_mask(residual, mask_fraction(state.mask_state, image_index))
    buf = np.repeat(mask.inlier[:, :, None].astype(np.float32), 3, axis=2)
    save_png(mask_dir / f"iter{state.iteration:06d}_img{image_index:03d}.png", buf)


@main.command("eval")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--scene", "scene_dir", type=click.Path(exists=True), required=True)
@click.option("--half-protocol/--no-half-protocol", default=True, show_default=True,
              help="fit embeddings on left halves, score right halves")
@click.option("--embed-iters", type=int, default=EMBED_FIT_ITERATIONS, show_default=True)
@click.option("--out", "out_json", type=click.Path(), default=None,
              help="also write the table as JSON")
def eval_cmd(ckpt, scene_dir, half_protocol, embed_iters, out_json):
    """Evaluate a checkpoint on the scene's held-out images."""
    bundle = load_scene(scene_dir)
    state = load_checkpoint(ckpt, bundle)
    images = bundle.test_images or bundle.images
    if not half_protocol:
        raise click.UsageError("only the half protocol is implemented; drop the flag")
    result = evaluate(state.cloud, state.app_model, state.bg_model, images,
                      iterations=embed_iters)
    header = f"{'image':>5} {'psnr_right':>10} {'ssim_right':>10} {'baseline':>10}"
    click.echo(header)
    for row in result["rows"]:
        click.echo(f"{row.image_index:>5} {row.psnr_right:>10.3f} "
                   f"{row.ssim_right:>10.4f} {row.psnr_right_baseline:>10.3f}")
    click.echo(f"mean psnr_right={result['mean_psnr_right']:.3f} "
               f"ssim_right={result['mean_ssim_right']:.4f} "
               f"baseline={result['mean_psnr_baseline']:.3f}")
    if out_json:
        payload = {
            "rows": [vars(r) for r in result["rows"]],
            "mean_psnr_right": result["mean_psnr_right"],
            "mean_ssim_right": result["mean_ssim_right"],
            "mean_psnr_baseline": result["mean_psnr_baseline"],
        }
        Path(out_json).write_text(json.dumps(payload, indent=2))


@main.command("render")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--scene", "scene_dir", type=click.Path(exists=True), default=None,
              help="override the scene directory recorded in the checkpoint")
@click.option("--view-index", type=int, default=0, show_default=True,
              help="training camera to render from")
@click.option("--camera-json", type=click.Path(exists=True), default=None,
              help="camera spec JSON overriding --view-index")
@click.option("--appearance", type=int, default=None, help="appearance image index")
@click.option("--interp", type=str, default=None, help="a,b,t interpolation spec")
@click.option("--encoding", type=click.Choice(["png", "jpeg"]), default="png",
              show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def render_cmd(ckpt, scene_dir, view_index, camera_json, appearance, interp,
               encoding, out_path):
    """Offline render through the same path the service uses."""
    snapshot = snapshot_from_checkpoint(ckpt, scene_dir)
    if camera_json:
        camera = CameraSpec(**json.loads(Path(camera_json).read_text()))
    else:
        if not 0 <= view_index < len(snapshot.cameras):
            raise click.UsageError(f"view index {view_index} out of range")
        camera = CameraSpec.from_camera(snapshot.cameras[view_index])
    if interp is not None:
        a, b, t = interp.split(",")
        spec = AppearanceSpec(pair=[int(a), int(b)], t=float(t))
    else:
        spec = AppearanceSpec(index=appearance if appearance is not None else 0)
    result = render_once(snapshot, RenderRequest(camera=camera, appearance=spec,
                                                 encoding=encoding))
    Path(out_path).write_bytes(result.payload)
    click.echo(f"rendered {out_path} in {result.millis:.1f} ms")


@main.command("serve")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--scene", "scene_dir", type=click.Path(exists=True), default=None)
@click.option("--host", type=str, default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8731, show_default=True)
@click.option("--frontend", type=click.Path(), default=None,
              help="directory with the built viewer bundle")
def serve_cmd(ckpt, scene_dir, host, port, frontend):
    """Serve a trained scene for interactive exploration."""
    from .service import serve

    serve(ckpt, host=host, port=port, scene_path=scene_dir, frontend_dir=frontend)


if __name__ == "__main__":
    main()
