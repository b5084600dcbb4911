"""Render service: HTTP endpoints, caching, streaming, snapshot store."""

import base64
import io
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from wildsplat.generator import GeneratorConfig, generate_synthetic_scene
from wildsplat.scene import save_scene
from wildsplat.service import (
    AppearanceSpec,
    CameraSpec,
    RenderRequest,
    SnapshotStore,
    create_app,
    render_once,
    snapshot_from_checkpoint,
)
from wildsplat.trainer import TrainConfig, TrainState, save_checkpoint, train_step


@pytest.fixture(scope="module")
def snapshot(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("svc")
    bundle = generate_synthetic_scene(
        GeneratorConfig(seed=21, n_gaussians=50, n_views=4, n_appearances=2,
                        image_size=(24, 24))
    )
    save_scene(bundle, tmp / "scene")
    state = TrainState(bundle, TrainConfig(iterations=20, seed=0,
                                           densify_start=10**9,
                                           alpha_loss_warmup=10**9))
    for _ in range(20):
        train_step(state)
    save_checkpoint(state, tmp / "ckpt", scene_path=str(tmp / "scene"))
    return snapshot_from_checkpoint(tmp / "ckpt")


@pytest.fixture()
def client(snapshot):
    store = SnapshotStore()
    store.publish(snapshot)
    return TestClient(create_app(store))


class TestCatalog:
    def test_scene_info(self, client):
        info = client.get("/api/scene").json()
        assert info["n_images"] == 4
        assert info["n_gaussians"] == 50
        assert info["sh_degree_color"] == 3
        assert info["sh_degree_background"] == 2
        assert len(info["thumbnails"]) == 4
        assert len(info["cameras"]) == 4

    def test_thumbnails_served(self, client):
        resp = client.get("/api/thumb/2")
        assert resp.status_code == 200
        img = Image.open(io.BytesIO(resp.content))
        assert max(img.size) <= 128

    def test_thumbnail_out_of_range(self, client):
        assert client.get("/api/thumb/9").status_code == 404


class TestRenderEndpoint:
    def test_render_and_cache_headers(self, client):
        cam = client.get("/api/scene").json()["cameras"][1]
        body = {"camera": cam, "appearance": {"index": 1}, "encoding": "png"}
        first = client.post("/api/render", json=body)
        assert first.status_code == 200
        assert first.headers["x-cache-hit"] == "0"
        assert float(first.headers["x-render-millis"]) > 0
        second = client.post("/api/render", json=body)
        assert second.headers["x-cache-hit"] == "1"
        assert second.content == first.content

    def test_interp_t0_equals_index(self, client):
        cam = client.get("/api/scene").json()["cameras"][0]
        by_index = client.post("/api/render", json={
            "camera": cam, "appearance": {"index": 0}, "encoding": "png"})
        by_interp = client.post("/api/render", json={
            "camera": cam, "appearance": {"pair": [0, 1], "t": 0.0}, "encoding": "png"})
        assert by_interp.content == by_index.content

    def test_interp_half_matches_raw_vector(self, client, snapshot):
        cam = client.get("/api/scene").json()["cameras"][0]
        emb = 0.5 * (snapshot.app_model.embeddings[0] + snapshot.app_model.embeddings[1])
        by_interp = client.post("/api/render", json={
            "camera": cam, "appearance": {"pair": [0, 1], "t": 0.5}, "encoding": "png"})
        by_vector = client.post("/api/render", json={
            "camera": cam, "appearance": {"vector": emb.tolist()}, "encoding": "png"})
        assert by_interp.content == by_vector.content

    def test_invalid_appearance_rejected_with_reason(self, client):
        cam = client.get("/api/scene").json()["cameras"][0]
        resp = client.post("/api/render", json={
            "camera": cam, "appearance": {"index": 99}, "encoding": "png"})
        assert resp.status_code == 422
        assert "out of range" in resp.text
        resp = client.post("/api/render", json={
            "camera": cam, "appearance": {"index": 0, "t": 0.5, "pair": [0, 1]}})
        assert resp.status_code == 422

    def test_jpeg_encoding(self, client):
        cam = client.get("/api/scene").json()["cameras"][0]
        resp = client.post("/api/render", json={
            "camera": cam, "appearance": {"index": 0}, "encoding": "jpeg"})
        assert resp.headers["content-type"] == "image/jpeg"
        Image.open(io.BytesIO(resp.content))  # decodable

    def test_concurrent_renders_independent(self, client, snapshot):
        cam = client.get("/api/scene").json()["cameras"][0]
        results = {}

        def hit(index):
            resp = client.post("/api/render", json={
                "camera": cam, "appearance": {"index": index}, "encoding": "png"})
            results[index] = resp.content

        threads = [threading.Thread(target=hit, args=(i % 2,)) for i in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        # sequential references
        ref0 = client.post("/api/render", json={
            "camera": cam, "appearance": {"index": 0}, "encoding": "png"}).content
        ref1 = client.post("/api/render", json={
            "camera": cam, "appearance": {"index": 1}, "encoding": "png"}).content
        assert results[0] == ref0 and results[1] == ref1
        assert ref0 != ref1


class TestStream:
    def test_initial_frame_and_updates(self, client):
        with client.websocket_connect("/ws") as ws:
            first = ws.receive_json()
            assert first["type"] == "frame" and first["seq"] == 1
            ws.send_json({"type": "set_appearance", "index": 1})
            second = ws.receive_json()
            assert second["type"] == "frame" and second["seq"] == 2
            assert base64.b64decode(second["data"])  # valid payload

    def test_monotone_sequence_numbers(self, client):
        cam = client.get("/api/scene").json()["cameras"][1]
        with client.websocket_connect("/ws") as ws:
            seqs = [ws.receive_json()["seq"]]
            for _ in range(3):
                ws.send_json({"type": "set_camera", "camera": cam})
                seqs.append(ws.receive_json()["seq"])
            assert seqs == sorted(seqs)

    def test_bad_message_reports_error(self, client):
        with client.websocket_connect("/ws") as ws:
            ws.receive_json()
            ws.send_json({"type": "bogus"})
            msg = ws.receive_json()
            assert msg["type"] == "error" and "bogus" in msg["reason"]

    def test_png_mode_matches_http_render(self, client):
        cam_raw = client.get("/api/scene").json()["cameras"][0]
        http_png = client.post("/api/render", json={
            "camera": cam_raw, "appearance": {"index": 0}, "encoding": "png"}).content
        with client.websocket_connect("/ws") as ws:
            ws.receive_json()
            ws.send_json({"type": "set_encoding", "encoding": "png"})
            ws.receive_json()
            ws.send_json({"type": "set_camera", "camera": cam_raw})
            frame = ws.receive_json()
            assert base64.b64decode(frame["data"]) == http_png


class TestSnapshotStore:
    def test_publish_bumps_version_and_no_torn_reads(self, snapshot):
        store = SnapshotStore()
        store.publish(snapshot)
        assert store.get().version == 1
        seen = []

        def reader():
            for _ in range(200):
                seen.append(store.get().version)

        threads = [threading.Thread(target=reader) for _ in range(3)]
        for t in threads:
            t.start()
        for _ in range(5):
            store.publish(snapshot)
        for t in threads:
            t.join()
        assert set(seen) <= {1, 2, 3, 4, 5, 6}

    def test_empty_store_raises(self):
        with pytest.raises(RuntimeError, match="snapshot"):
            SnapshotStore().get()


class TestCacheEquivalence:
    def test_cached_path_equals_live_path(self, snapshot, rng):
        # cached render vs a live MLP-path render, before quantization
        from wildsplat.appearance import colors_for_view
        from wildsplat.background import background_image, composite
        from wildsplat.rasterizer import render_cloud

        camera = snapshot.cameras[0]
        spec = AppearanceSpec(index=1)
        coeffs, embedding, _ = snapshot.coeffs_for(spec)
        colors = colors_for_view(snapshot.cloud.means, coeffs, camera)
        cached_img = render_cloud(snapshot.cloud, colors, camera)
        live_coeffs = snapshot.app_model.predict_sh(embedding, snapshot.cloud.features)
        live_colors = colors_for_view(snapshot.cloud.means, live_coeffs, camera)
        live_img = render_cloud(snapshot.cloud, live_colors, camera)
        assert np.abs(cached_img.rgb - live_img.rgb).max() <= 1e-6
