"""Render service: camera + appearance-conditioned rendering of a trained
scene over HTTP and a WebSocket stream, with an LRU of cached appearances.

Protocol (version 1):
  GET  /api/scene         -> scene metadata and thumbnail URLs
  GET  /api/thumb/{j}     -> JPEG thumbnail of training image j
  POST /api/render        -> image bytes; headers X-Render-Millis, X-Cache-Hit
  WS   /ws                -> messages {type: set_camera|set_appearance|interp|
                             set_encoding}; replies {type: frame, seq,
                             encoding, data(base64), cache_hit, render_millis}
Renders always use a single immutable snapshot; the appearance cache stores
one coefficient table per embedding key (interpolation t quantized to 1/256
so nearby slider positions share cache entries).
"""

from __future__ import annotations

import asyncio
import base64
import io
import json
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from fastapi import FastAPI, HTTPException, Response, WebSocket, WebSocketDisconnect
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel, Field, model_validator

from .appearance import AppearanceModel, build_cache
from .background import BackgroundModel, background_image, composite
from .appearance import colors_for_view
from .rasterizer import render_cloud
from .scene import CameraView, GaussianCloud, linear_to_srgb, load_scene
from .trainer import load_checkpoint, read_checkpoint_meta

PROTOCOL_VERSION = 1
THUMB_MAX_SIDE = 128
CACHE_SIZE = 16
INTERP_QUANT = 256


def encode_image(linear: np.ndarray, encoding: str) -> bytes:
    """Quantize a linear image to 8-bit sRGB and encode (png or jpeg q90)."""
    codes = np.round(linear_to_srgb(linear) * 255.0).astype(np.uint8)
    img = Image.fromarray(codes, mode="RGB")
    buf = io.BytesIO()
    if encoding == "png":
        img.save(buf, format="PNG")
    elif encoding == "jpeg":
        img.save(buf, format="JPEG", quality=90)
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    return buf.getvalue()


class CameraSpec(BaseModel):
    rotation: list[float] = Field(min_length=9, max_length=9)
    translation: list[float] = Field(min_length=3, max_length=3)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = Field(ge=1, le=4096)
    height: int = Field(ge=1, le=4096)

    def to_camera(self) -> CameraView:
        return CameraView(
            rotation=np.array(self.rotation).reshape(3, 3),
            translation=np.array(self.translation),
            fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
            width=self.width, height=self.height,
        )

    @classmethod
    def from_camera(cls, camera: CameraView) -> "CameraSpec":
        d = camera.to_dict()
        return cls(**d)


class AppearanceSpec(BaseModel):
    """Exactly one of: index, pair+t, vector."""

    index: int | None = None
    pair: list[int] | None = Field(default=None, min_length=2, max_length=2)
    t: float | None = None
    vector: list[float] | None = None

    @model_validator(mode="after")
    def _one_of(self):
        modes = [self.index is not None, self.pair is not None, self.vector is not None]
        if sum(modes) != 1:
            raise ValueError("appearance spec needs exactly one of index/pair/vector")
        if self.pair is not None and self.t is None:
            raise ValueError("pair interpolation needs t")
        if self.t is not None and not 0.0 <= self.t <= 1.0:
            raise ValueError("t must lie in [0, 1]")
        return self


class RenderRequest(BaseModel):
    camera: CameraSpec
    appearance: AppearanceSpec = AppearanceSpec(index=0)
    encoding: Literal["png", "jpeg"] = "png"


@dataclass
class SceneSnapshot:
    """Immutable published copy of the trained scene."""

    cloud: GaussianCloud
    app_model: AppearanceModel
    bg_model: BackgroundModel | None
    cameras: list[CameraView]
    thumbnails: list[bytes]
    name: str
    version: int = 0
    _cache: OrderedDict = field(default_factory=OrderedDict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def resolve(self, spec: AppearanceSpec) -> tuple[tuple, np.ndarray]:
        """Cache key and embedding for an appearance spec."""
        n = self.app_model.n_images
        if spec.index is not None:
            if not 0 <= spec.index < n:
                raise ValueError(f"appearance index {spec.index} out of range [0, {n})")
            return ("index", spec.index), self.app_model.embeddings[spec.index]
        if spec.pair is not None:
            a, b = spec.pair
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"interpolation pair {spec.pair} out of range [0, {n})")
            tq = round(spec.t * INTERP_QUANT)
            t = np.asarray(tq / INTERP_QUANT, dtype=self.app_model.embeddings.dtype)
            emb = (1 - t) * self.app_model.embeddings[a] + t * self.app_model.embeddings[b]
            return ("interp", a, b, tq), emb
        vec = np.asarray(spec.vector, dtype=self.app_model.embeddings.dtype)
        if vec.shape != (self.app_model.embed_dim,):
            raise ValueError(
                f"appearance vector has length {vec.shape[0]}, "
                f"expected {self.app_model.embed_dim}"
            )
        return ("vector", vec.tobytes()), vec

    def coeffs_for(self, spec: AppearanceSpec) -> tuple[np.ndarray, np.ndarray, bool]:
        """Cached coefficient table (built with one MLP pass on a miss)."""
        key, embedding = self.resolve(spec)
        with self._lock:
            hit = key in self._cache
            if hit:
                self._cache.move_to_end(key)
                cached = self._cache[key]
        if not hit:
            cached = build_cache(self.app_model, self.cloud.features, embedding)
            with self._lock:
                self._cache[key] = cached
                self._cache.move_to_end(key)
                while len(self._cache) > CACHE_SIZE:
                    self._cache.popitem(last=False)
        return cached.coeffs, embedding, hit


@dataclass
class RenderResult:
    payload: bytes
    encoding: str
    cache_hit: bool
    millis: float
    cache_build_millis: float
    raster_millis: float


def render_once(snapshot: SceneSnapshot, request: RenderRequest) -> RenderResult:
    """Render a frame from one snapshot; cache hits skip the MLP entirely."""
    t_start = time.perf_counter()
    camera = request.camera.to_camera()
    t_cache = time.perf_counter()
    coeffs, embedding, hit = snapshot.coeffs_for(request.appearance)
    cache_ms = (time.perf_counter() - t_cache) * 1000.0
    t_raster = time.perf_counter()
    colors = colors_for_view(snapshot.cloud.means, coeffs, camera,
                             degree_max=snapshot.app_model.degree_max)
    out = render_cloud(snapshot.cloud, colors, camera)
    if snapshot.bg_model is not None:
        bg_coeffs = snapshot.bg_model.predict_sh(embedding)
        bg = background_image(bg_coeffs, camera, degree_max=snapshot.bg_model.degree_max)
        image = composite(out.rgb, out.alpha, bg.rgb)
    else:
        image = out.rgb
    raster_ms = (time.perf_counter() - t_raster) * 1000.0
    payload = encode_image(image, request.encoding)
    total_ms = (time.perf_counter() - t_start) * 1000.0
    return RenderResult(payload=payload, encoding=request.encoding, cache_hit=hit,
                        millis=total_ms, cache_build_millis=cache_ms,
                        raster_millis=raster_ms)


class SnapshotStore:
    """Single-publisher, many-reader snapshot holder (no torn reads)."""

    def __init__(self, snapshot: SceneSnapshot | None = None):
        self._lock = threading.Lock()
        self._snapshot = snapshot

    def publish(self, snapshot: SceneSnapshot) -> None:
        with self._lock:
            snapshot.version = (self._snapshot.version + 1) if self._snapshot else 1
            self._snapshot = snapshot

    def get(self) -> SceneSnapshot:
        with self._lock:
            if self._snapshot is None:
                raise RuntimeError("no snapshot published")
            return self._snapshot


def _make_thumbnail(pixels: np.ndarray) -> bytes:
    codes = np.round(linear_to_srgb(pixels) * 255.0).astype(np.uint8)
    img = Image.fromarray(codes, mode="RGB")
    img.thumbnail((THUMB_MAX_SIDE, THUMB_MAX_SIDE), Image.LANCZOS)
    buf = io.BytesIO()
    img.save(buf, format="JPEG", quality=85)
    return buf.getvalue()


def snapshot_from_checkpoint(ckpt_path: Path | str,
                             scene_path: Path | str | None = None) -> SceneSnapshot:
    meta = read_checkpoint_meta(ckpt_path)
    scene_dir = scene_path or meta.get("scene_path")
    if scene_dir is None:
        raise IOError("checkpoint does not record a scene path; pass one explicitly")
    bundle = load_scene(scene_dir)
    state = load_checkpoint(ckpt_path, bundle)
    return SceneSnapshot(
        cloud=state.cloud,
        app_model=state.app_model,
        bg_model=state.bg_model,
        cameras=[img.camera for img in bundle.images],
        thumbnails=[_make_thumbnail(img.pixels) for img in bundle.images],
        name=bundle.name,
    )


def create_app(store: SnapshotStore, frontend_dir: Path | str | None = None) -> FastAPI:
    app = FastAPI(title="wildsplat render service")

    @app.get("/api/scene")
    def scene_info():
        snap = store.get()
        h = snap.cameras[0].height if snap.cameras else 0
        w = snap.cameras[0].width if snap.cameras else 0
        return {
            "protocol_version": PROTOCOL_VERSION,
            "name": snap.name,
            "snapshot_version": snap.version,
            "n_gaussians": snap.cloud.count,
            "n_images": len(snap.cameras),
            "sh_degree_color": snap.app_model.degree_max,
            "sh_degree_background": snap.bg_model.degree_max if snap.bg_model else None,
            "image_size": [h, w],
            "thumbnails": [f"/api/thumb/{j}" for j in range(len(snap.cameras))],
            "cameras": [CameraSpec.from_camera(c).model_dump() for c in snap.cameras],
        }

    @app.get("/api/thumb/{index}")
    def thumb(index: int):
        snap = store.get()
        if not 0 <= index < len(snap.thumbnails):
            raise HTTPException(404, f"no training image {index}")
        return Response(content=snap.thumbnails[index], media_type="image/jpeg")

    @app.post("/api/render")
    def render(request: RenderRequest):
        snap = store.get()
        try:
            result = render_once(snap, request)
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        media = "image/png" if result.encoding == "png" else "image/jpeg"
        return Response(
            content=result.payload,
            media_type=media,
            headers={
                "X-Render-Millis": f"{result.millis:.2f}",
                "X-Cache-Hit": "1" if result.cache_hit else "0",
                "X-Cache-Build-Millis": f"{result.cache_build_millis:.2f}",
                "X-Raster-Millis": f"{result.raster_millis:.2f}",
            },
        )

    @app.websocket("/ws")
    async def stream(ws: WebSocket):
        await ws.accept()
        snap = store.get()
        state = {
            "camera": CameraSpec.from_camera(snap.cameras[0]) if snap.cameras else None,
            "appearance": AppearanceSpec(index=0),
            "encoding": "jpeg",
        }
        dirty = asyncio.Event()
        if state["camera"] is not None:
            dirty.set()
        closed = asyncio.Event()

        async def reader():
            try:
                while True:
                    msg = await ws.receive_json()
                    kind = msg.get("type")
                    try:
                        if kind == "set_camera":
                            state["camera"] = CameraSpec(**msg["camera"])
                        elif kind == "set_appearance":
                            state["appearance"] = AppearanceSpec(index=int(msg["index"]))
                        elif kind == "interp":
                            state["appearance"] = AppearanceSpec(
                                pair=[int(msg["a"]), int(msg["b"])], t=float(msg["t"])
                            )
                        elif kind == "set_encoding":
                            if msg["encoding"] not in ("png", "jpeg"):
                                raise ValueError(f"unknown encoding {msg['encoding']!r}")
                            state["encoding"] = msg["encoding"]
                        else:
                            raise ValueError(f"unknown message type {kind!r}")
                        dirty.set()
                    except (KeyError, ValueError, TypeError) as exc:
                        await ws.send_json({"type": "error", "reason": str(exc)})
            except WebSocketDisconnect:
                closed.set()
                dirty.set()

        reader_task = asyncio.create_task(reader())
        seq = 0
        loop = asyncio.get_running_loop()
        try:
            while not closed.is_set():
                await dirty.wait()
                dirty.clear()
                if closed.is_set() or state["camera"] is None:
                    continue
                request = RenderRequest(camera=state["camera"],
                                        appearance=state["appearance"],
                                        encoding=state["encoding"])
                current = store.get()
                try:
                    result = await loop.run_in_executor(None, render_once, current, request)
                except ValueError as exc:
                    await ws.send_json({"type": "error", "reason": str(exc)})
                    continue
                seq += 1
                await ws.send_json({
                    "type": "frame",
                    "seq": seq,
                    "encoding": result.encoding,
                    "data": base64.b64encode(result.payload).decode("ascii"),
                    "cache_hit": result.cache_hit,
                    "render_millis": result.millis,
                    "snapshot_version": current.version,
                })
        except WebSocketDisconnect:
            pass
        finally:
            reader_task.cancel()
        return

    if frontend_dir is not None and Path(frontend_dir).exists():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="viewer")

    return app


def serve(ckpt_path: str, host: str = "127.0.0.1", port: int = 8731,
          scene_path: str | None = None, frontend_dir: str | None = None) -> None:
    """Load a checkpoint and run the service until interrupted."""
    import uvicorn

    store = SnapshotStore()
    store.publish(snapshot_from_checkpoint(ckpt_path, scene_path))
    app = create_app(store, frontend_dir=frontend_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
