"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The heavy synthetic
trainings are shared through module-scoped fixtures; everything is seeded
and deterministic.
"""

import dataclasses
import time

import numpy as np
import pytest

from wildsplat import rasterizer as R
from wildsplat.appearance import build_cache, colors_for_view
from wildsplat.background import alpha_loss, composite, residual_mask
from wildsplat.evaluation import optimize_test_embedding
from wildsplat.generator import GeneratorConfig, generate_synthetic_scene
from wildsplat.metrics import masked_dssim, psnr
from wildsplat.pipeline import backward_view, forward_view
from wildsplat.robustmask import MaskState, build_mask, mask_fraction, update_stats
from wildsplat.scene import FEATURE_DIM, GaussianCloud
from wildsplat.trainer import (
    TrainConfig,
    TrainState,
    densify_and_prune,
    densify_due,
    load_checkpoint,
    save_checkpoint,
    train_step,
)

LAMBDA_SSIM = 0.2
LAMBDA_ALPHA = 0.01


def announce(name: str, ok: bool, detail: str):
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


# --------------------------------------------------------------------------
# Criterion: gradient suite (full composite loss, float64, rel err < 1e-4)
# --------------------------------------------------------------------------

class Float64Setup:
    def __init__(self, seed=5, n=8, size=8):
        rng = np.random.default_rng(seed)
        from wildsplat.appearance import AppearanceModel
        from wildsplat.background import BackgroundModel
        from conftest import make_camera, make_cloud

        self.cloud = make_cloud(rng, n, dtype=np.float64)
        self.camera = make_camera(size, size)
        self.app = AppearanceModel(3, rng, dtype=np.float64)
        self.app.mlp.w3 = rng.normal(0, 0.05, self.app.mlp.w3.shape)
        self.app.mlp.b3 = rng.normal(0, 0.05, self.app.mlp.b3.shape)
        self.bg = BackgroundModel(rng, dtype=np.float64)
        self.bg.mlp.w3 = rng.normal(0, 0.05, self.bg.mlp.w3.shape)
        self.bg.mlp.b3 = rng.normal(0, 0.05, self.bg.mlp.b3.shape)
        self.embedding = self.app.embeddings[1].copy()
        self.gt = rng.uniform(0, 1, (size, size, 3))
        self.inlier = (rng.uniform(0, 1, (size, size)) > 0.25).astype(np.float64)
        self.selected = rng.uniform(0, 1, (size, size)) > 0.6
        self.rng = rng

    def loss(self, with_grads=False):
        vr = forward_view(self.cloud, self.app, self.bg, self.camera, self.embedding)
        diff = vr.image - self.gt
        n_in = self.inlier.sum()
        l1 = float((np.abs(diff).mean(axis=2) * self.inlier).sum() / n_in)
        d_l1 = np.sign(diff) * self.inlier[..., None] / (3.0 * n_in)
        dssim, d_dssim = masked_dssim(vr.image, self.gt, self.inlier)
        la, d_alpha = alpha_loss(vr.render.alpha, self.selected, LAMBDA_ALPHA)
        total = (1 - LAMBDA_SSIM) * l1 + LAMBDA_SSIM * dssim + la
        if not with_grads:
            return total
        d_image = (1 - LAMBDA_SSIM) * d_l1 + LAMBDA_SSIM * d_dssim
        grads = backward_view(vr, self.app, self.bg, d_image, d_alpha)
        return total, grads


def test_gradient_suite():
    t0 = time.time()
    setup = Float64Setup()
    _, grads = setup.loss(with_grads=True)
    emb_grad = grads["embedding"]
    classes = {
        "means": (setup.cloud.means, grads["means"]),
        "rotations": (setup.cloud.quats, grads["quats"]),
        "scales": (setup.cloud.log_scales, grads["log_scales"]),
        "opacities": (setup.cloud.opacity_logits, grads["opacity_logits"]),
        "features": (setup.cloud.features, grads["features"]),
        "embeddings": (setup.embedding, emb_grad),
        "appearance_mlp": None,
        "background_mlp": None,
    }
    results = {}
    eps = 1e-6

    def check(arr, grad, n_samples=12):
        worst = 0.0
        for _ in range(n_samples):
            ix = tuple(setup.rng.integers(0, s) for s in arr.shape)
            orig = arr[ix]
            arr[ix] = orig + eps
            up = setup.loss()
            arr[ix] = orig - eps
            down = setup.loss()
            arr[ix] = orig
            fd = (up - down) / (2 * eps)
            an = grad[ix]
            if abs(fd) < 1e-12 and abs(an) < 1e-12:
                continue
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an)))
        return worst

    for name, pair in classes.items():
        if pair is not None:
            results[name] = check(*pair)
    results["appearance_mlp"] = max(
        check(getattr(setup.app.mlp, p), grads[f"app_mlp.{p}"], 6)
        for p in ("w1", "b1", "w2", "b2", "w3", "b3")
    )
    results["background_mlp"] = max(
        check(getattr(setup.bg.mlp, p), grads[f"bg_mlp.{p}"], 6)
        for p in ("w1", "b1", "w2", "b2", "w3", "b3")
    )
    elapsed = time.time() - t0
    worst_class = max(results, key=results.get)
    ok = all(v < 1e-4 for v in results.values()) and elapsed < 300
    detail = (f"worst rel err {results[worst_class]:.2e} in {worst_class}, "
              f"{elapsed:.0f}s")
    announce("gradient-suite", ok, detail)


# --------------------------------------------------------------------------
# Criterion: rasterizer oracle equivalence (50 scenes, <= 1e-6, < 1 min)
# --------------------------------------------------------------------------

def test_rasterizer_oracle_equivalence():
    from conftest import make_camera, make_cloud

    t0 = time.time()
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(20, 201))
        cloud = make_cloud(rng, n, dtype=np.float64,
                           opacity_range=(-1.0, float(rng.uniform(1.0, 3.5))))
        colors = rng.uniform(0, 1, (n, 3))
        camera = make_camera(32, 32)
        proj = R.project_gaussians(cloud, camera)
        out = R.render_forward(proj, colors)
        rgb, alpha = R.render_brute_force(proj, colors)
        worst = max(worst, np.abs(out.rgb - rgb).max(), np.abs(out.alpha - alpha).max())
    elapsed = time.time() - t0
    ok = worst <= 1e-6 and elapsed < 60
    announce("rasterizer-oracle", ok, f"max abs diff {worst:.2e}, {elapsed:.1f}s")


# --------------------------------------------------------------------------
# Shared heavy fixture: the appearance-recovery trainings (3 seeds)
# --------------------------------------------------------------------------

APPEARANCE_SCENE = dict(n_gaussians=1000, n_views=24, n_appearances=4,
                        image_size=(48, 48), n_test_views=1, test_blend=True)
APPEARANCE_ITERS = 5000


def _train_appearance(seed: int):
    bundle = generate_synthetic_scene(GeneratorConfig(seed=100 + seed,
                                                      **APPEARANCE_SCENE))
    config = TrainConfig(iterations=APPEARANCE_ITERS, seed=seed,
                         densify_start=10**9)
    state = TrainState(bundle, config)
    for _ in range(APPEARANCE_ITERS):
        train_step(state)
    return bundle, state


@pytest.fixture(scope="module")
def appearance_runs():
    t0 = time.time()
    runs = {seed: _train_appearance(seed) for seed in (0, 1, 2)}
    runs["train_seconds"] = time.time() - t0
    return runs


def _train_view_psnr(bundle, state, stride=1):
    values = []
    for j in range(0, bundle.n_images, stride):
        img = bundle.images[j]
        vr = forward_view(state.cloud, state.app_model, state.bg_model, img.camera,
                          state.app_model.embeddings[j], keep=False)
        values.append(psnr(np.clip(vr.image, 0, 1), img.pixels))
    return float(np.mean(values))


def test_appearance_recovery(appearance_runs):
    per_seed = [
        _train_view_psnr(*appearance_runs[seed]) for seed in (0, 1, 2)
    ]
    median_psnr = float(np.median(per_seed))
    elapsed = appearance_runs["train_seconds"]

    # cross-appearance discrimination on the seed-0 run
    bundle, state = appearance_runs[0]
    truth = bundle.truth
    margins = []
    for v in (0, 5, 10, 15):
        own = truth.conditions[v]
        render = forward_view(state.cloud, state.app_model, state.bg_model,
                              bundle.images[v].camera,
                              state.app_model.embeddings[v], keep=False).image
        render = np.clip(render, 0, 1)
        own_psnr = psnr(render, truth.transform_image(truth.base_images[v], own))
        others = [psnr(render, truth.transform_image(truth.base_images[v], k))
                  for k in range(4) if k != own]
        margins.append(own_psnr - max(others))
    margin = min(margins)
    ok = median_psnr >= 28.0 and margin >= 3.0 and elapsed < 1800
    announce(
        "appearance-recovery", ok,
        f"median train PSNR {median_psnr:.2f} dB (seeds {['%.2f' % p for p in per_seed]}), "
        f"min cross-appearance margin {margin:.2f} dB, training {elapsed:.0f}s",
    )


def test_cache_equivalence(appearance_runs):
    bundle, state = appearance_runs[0]
    app = state.app_model
    cloud = state.cloud
    worst = 0.0
    before = app.inference_count
    caches = {j: build_cache(app, cloud.features, app.embeddings[j]) for j in (0, 1, 2)}
    builds = app.inference_count - before
    for j, cached in caches.items():
        live_coeffs = app.predict_sh(app.embeddings[j], cloud.features)
        for v in range(0, 24, 5):
            camera = bundle.images[v].camera
            live = R.render_cloud(cloud, colors_for_view(cloud.means, live_coeffs, camera),
                                  camera).rgb
            fast = R.render_cloud(cloud, colors_for_view(cloud.means, cached.coeffs, camera),
                                  camera).rgb
            worst = max(worst, float(np.abs(live - fast).max()))
    ok = worst <= 1e-6 and builds == 3
    announce("cache-equivalence", ok,
             f"max |cached - live| {worst:.2e} over 5 cameras x 3 embeddings, "
             f"{builds} MLP batches for 3 embeddings")


def test_left_half_protocol(appearance_runs):
    bundle, state = appearance_runs[0]
    test_image = bundle.test_images[0]  # novel pose, blended novel condition
    split = test_image.camera.width // 2
    gt_right = test_image.pixels[:, split:]
    baseline_render = forward_view(state.cloud, state.app_model, state.bg_model,
                                   test_image.camera, state.app_model.mean_embedding(),
                                   keep=False).image
    baseline = psnr(np.clip(baseline_render[:, split:], 0, 1), gt_right)
    fit = optimize_test_embedding(state.cloud, state.app_model, state.bg_model,
                                  test_image, iterations=128)
    fitted_render = forward_view(state.cloud, state.app_model, state.bg_model,
                                 test_image.camera, fit.embedding, keep=False).image
    fitted = psnr(np.clip(fitted_render[:, split:], 0, 1), gt_right)
    ok = fitted - baseline >= 3.0
    announce("left-half-protocol", ok,
             f"right-half PSNR {fitted:.2f} dB vs mean-embedding {baseline:.2f} dB "
             f"(gain {fitted - baseline:.2f})")


# --------------------------------------------------------------------------
# Criterion: robust mask efficacy
# --------------------------------------------------------------------------

MASK_SCENE = dict(n_gaussians=500, n_views=20, n_appearances=2, image_size=(48, 48),
                  occluder_frac=0.10, occluder_image_frac=0.30)
MASK_ITERS = 2000


def _train_masked(use_mask: bool):
    bundle = generate_synthetic_scene(GeneratorConfig(seed=777, **MASK_SCENE))
    config = TrainConfig(iterations=MASK_ITERS, seed=3, use_mask=use_mask)
    state = TrainState(bundle, config)
    for _ in range(MASK_ITERS):
        train_step(state)
        if densify_due(state):
            densify_and_prune(state)
    return bundle, state


@pytest.fixture(scope="module")
def mask_runs():
    return {"masked": _train_masked(True), "unmasked": _train_masked(False)}


def _occluded_region_psnr(bundle, state):
    truth = bundle.truth
    values = []
    for j in range(bundle.n_images):
        region = truth.occluder_masks[j].astype(bool)
        if not region.any():
            continue
        clean_gt = truth.transform_image(truth.base_images[j], truth.conditions[j])
        render = forward_view(state.cloud, state.app_model, state.bg_model,
                              bundle.images[j].camera, state.app_model.embeddings[j],
                              keep=False).image
        render = np.clip(render, 0, 1)
        mse = float(((render[region] - clean_gt[region]) ** 2).mean())
        values.append(10 * np.log10(1.0 / max(mse, 1e-12)))
    return float(np.mean(values))


def test_robust_mask_efficacy(mask_runs):
    bundle, state = mask_runs["masked"]
    truth = bundle.truth
    height = bundle.images[0].camera.height
    occ_masked = occ_total = clean_masked = clean_total = 0
    for j in range(bundle.n_images):
        img = bundle.images[j]
        vr = forward_view(state.cloud, state.app_model, state.bg_model, img.camera,
                          state.app_model.embeddings[j], keep=False)
        residual = np.abs(vr.image.astype(np.float64)
                          - img.pixels.astype(np.float64)).mean(axis=2)
        mask = build_mask(residual, mask_fraction(state.mask_state, j))
        occluder = truth.occluder_masks[j].astype(bool)
        rows = np.arange(height)[:, None]
        below = np.broadcast_to(rows > 0.4 * height, occluder.shape)
        occ_px = occluder & below
        occ_masked += int((mask.inlier[occ_px] == 0).sum())
        occ_total += int(occ_px.sum())
        clean = ~occluder
        clean_masked += int((mask.inlier[clean] == 0).sum())
        clean_total += int(clean.sum())
    occluder_rate = occ_masked / max(occ_total, 1)
    clean_rate = clean_masked / max(clean_total, 1)

    ghost_masked = _occluded_region_psnr(*mask_runs["masked"])
    ghost_unmasked = _occluded_region_psnr(*mask_runs["unmasked"])
    gain = ghost_masked - ghost_unmasked
    ok = occluder_rate >= 0.70 and clean_rate <= 0.10 and gain >= 2.0
    announce(
        "robust-mask-efficacy", ok,
        f"occluder pixels masked {100 * occluder_rate:.1f}%, clean masked "
        f"{100 * clean_rate:.1f}%, occluded-region PSNR gain {gain:.2f} dB "
        f"({ghost_masked:.2f} vs {ghost_unmasked:.2f})",
    )


# --------------------------------------------------------------------------
# Criterion: mask-formula conformance (exact transcription oracle)
# --------------------------------------------------------------------------

def test_mask_formula_conformance():
    from test_robustmask import transcription_oracle

    rng = np.random.default_rng(23)
    mismatches = 0
    for _ in range(100):
        h = int(rng.integers(12, 40))
        w = int(rng.integers(12, 40))
        residual = rng.uniform(0, 1, (h, w)) ** rng.uniform(0.5, 2.0)
        # drive k through the spec interpolation formula on random stats
        state = MaskState(n_images=1, per_min=0.05, per_max=0.40, stats_scope="image")
        lo, hi = np.sort(rng.uniform(0.0, 1.0, 2))
        cur = rng.uniform(lo, hi) if hi > lo else lo
        update_stats(state, 0, hi)
        update_stats(state, 0, lo)
        update_stats(state, 0, cur)
        k = mask_fraction(state, 0)
        expected_k = (0.05 if hi == lo
                      else (cur - lo) / (hi - lo) * 0.35 + 0.05)
        if abs(k - expected_k) > 1e-12:
            mismatches += 1
            continue
        ours = build_mask(residual, k)
        omega, final, t_eps = transcription_oracle(residual, k)
        if ours.threshold != t_eps or not np.array_equal(ours.pre_blur, omega) \
                or not np.array_equal(ours.inlier, final):
            mismatches += 1
    announce("mask-formula-conformance", mismatches == 0,
             f"{100 - mismatches}/100 random fields match the transcription oracle")


# --------------------------------------------------------------------------
# Criterion: background model (pure sky fit + floater suppression)
# --------------------------------------------------------------------------

def test_background_pure_sky_fit():
    bundle = generate_synthetic_scene(
        GeneratorConfig(seed=55, n_gaussians=0, n_views=6, n_appearances=2,
                        image_size=(48, 48))
    )
    config = TrainConfig(iterations=1500, seed=0, densify_start=10**9,
                         alpha_loss_warmup=10**9, use_mask=False)
    state = TrainState(bundle, config)
    for _ in range(1500):
        train_step(state)
    value = _train_view_psnr(bundle, state)
    announce("background-pure-sky", value >= 35.0,
             f"sky-only train PSNR {value:.2f} dB")


FLOATER_SCENE = dict(n_gaussians=300, n_views=16, n_appearances=2,
                     image_size=(48, 48), n_sky_points=150)
FLOATER_ITERS = 4000


def _train_floaters(use_background: bool):
    bundle = generate_synthetic_scene(GeneratorConfig(seed=91, **FLOATER_SCENE))
    config = TrainConfig(iterations=FLOATER_ITERS, seed=7,
                         use_background=use_background)
    state = TrainState(bundle, config)
    for _ in range(FLOATER_ITERS):
        train_step(state)
        if densify_due(state):
            densify_and_prune(state)
    return bundle, state


def _count_floaters(bundle, state):
    center = bundle.truth.gt_means.mean(axis=0)
    dist = np.linalg.norm(state.cloud.means - center.astype(state.cloud.means.dtype),
                          axis=1)
    return int((dist > 10 * bundle.truth.scene_radius).sum())


def test_background_floater_suppression():
    bundle_bg, state_bg = _train_floaters(True)
    bundle_no, state_no = _train_floaters(False)
    with_bg = _count_floaters(bundle_bg, state_bg)
    without = _count_floaters(bundle_no, state_no)
    ok = without > 0 and with_bg <= 0.2 * without
    announce("background-floaters", ok,
             f"distant gaussians: {with_bg} with background model vs {without} "
             f"without (need >= 80% reduction)")


# --------------------------------------------------------------------------
# Criterion: determinism and checkpoint/resume
# --------------------------------------------------------------------------

def test_determinism_and_resume(tmp_path):
    scene = GeneratorConfig(seed=37, n_gaussians=120, n_views=6, n_appearances=2,
                            image_size=(32, 32))
    config = TrainConfig(iterations=150, seed=9, mask_warmup=20,
                         alpha_loss_warmup=60, densify_start=50,
                         densify_interval=25)

    def run(n_steps, state=None, bundle=None):
        if state is None:
            bundle = generate_synthetic_scene(scene)
            state = TrainState(bundle, config)
        reports = []
        for _ in range(n_steps):
            reports.append(dataclasses.asdict(train_step(state)))
            if densify_due(state):
                densify_and_prune(state)
        return bundle, state, reports

    _, _, run_a = run(150)
    bundle_b, state_b, run_b = run(150)
    identical = run_a == run_b

    bundle_c, state_c, first_half = run(75)
    save_checkpoint(state_c, tmp_path / "mid")
    resumed = load_checkpoint(tmp_path / "mid", bundle_c)
    _, _, second_half = run(75, state=resumed, bundle=bundle_c)
    resume_ok = first_half + second_half == run_a
    announce("determinism", identical and resume_ok,
             f"two runs identical: {identical}; checkpoint/resume matches: {resume_ok}")
