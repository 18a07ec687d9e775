import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vqadesk.errors import SchemaViolation, UnreadableImage
from vqadesk.features import (
    ExtractorSpec,
    FeatureStore,
    cache_features,
    content_hash,
    extract_external,
    extract_grid,
)

from conftest import noise_png, png_bytes


class TestGridExtractor:
    def test_36_regions_tile_unit_square(self):
        rf = extract_grid(noise_png(60, 48), max_regions=36, feature_dim=64)
        assert rf.n_regions == 36
        boxes = rf.boxes.reshape(6, 6, 4)
        assert np.allclose(boxes[0, 0], [0, 0, 1 / 6, 1 / 6])
        assert np.allclose(boxes[5, 5], [5 / 6, 5 / 6, 1, 1])
        # cells tile exactly: each row/col boundary shared
        assert np.allclose(boxes[:, :-1, 2], boxes[:, 1:, 0])
        assert np.allclose(boxes[:-1, :, 3], boxes[1:, :, 1])

    def test_uniform_image_has_equal_cell_means(self):
        rf = extract_grid(png_bytes(32, 32, (128, 128, 128)), max_regions=9, feature_dim=16)
        means = rf.features[:, :3]
        assert np.allclose(means, means[0])

    def test_deterministic(self):
        data = noise_png(40, 40, seed=3)
        a = extract_grid(data, 16, 48)
        b = extract_grid(data, 16, 48)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.boxes, b.boxes)

    def test_non_square_budget_rounds_down(self):
        rf = extract_grid(noise_png(30, 30), max_regions=10, feature_dim=16)
        assert rf.n_regions == 9

    def test_unreadable_image(self):
        with pytest.raises(UnreadableImage):
            extract_grid(b"garbage", 9, 16)

    @settings(max_examples=25, deadline=None)
    @given(
        w=st.integers(4, 40),
        h=st.integers(4, 40),
        max_regions=st.integers(1, 25),
        dim=st.integers(8, 64),
        seed=st.integers(0, 100),
    )
    def test_invariants_hold_for_random_images(self, w, h, max_regions, dim, seed):
        rf = extract_grid(noise_png(w, h, seed), max_regions, dim)
        rf.validate()  # raises on any invariant violation
        assert 1 <= rf.n_regions <= max_regions
        assert rf.features.shape == (rf.n_regions, dim)


def _fake_provider(response_builder):
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers["Content-Length"])
            body = self.rfile.read(length)
            status, doc = response_builder(self.headers, body)
            payload = json.dumps(doc).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, f"http://127.0.0.1:{server.server_port}"


class TestExternalExtractor:
    def _spec(self, endpoint, max_regions=4, feature_dim=8):
        return ExtractorSpec("external", endpoint, max_regions, feature_dim)

    def test_accepts_and_normalizes(self):
        def build(headers, body):
            dim = int(headers["X-Feature-Dim"])
            return 200, {
                "image": {"width": 100, "height": 50},
                "regions": [
                    {"box": [0, 0, 50, 25], "feature": [0.5] * dim},
                    {"box": [50, 25, 100, 50], "feature": [1.0] * dim},
                ],
            }

        server, endpoint = _fake_provider(build)
        try:
            rf = extract_external(noise_png(8, 8), self._spec(endpoint))
            assert rf.n_regions == 2
            assert np.allclose(rf.boxes[0], [0, 0, 0.5, 0.5])
            assert np.allclose(rf.boxes[1], [0.5, 0.5, 1, 1])
        finally:
            server.shutdown()

    def test_degenerate_box_rejected(self):
        def build(headers, body):
            dim = int(headers["X-Feature-Dim"])
            return 200, {
                "image": {"width": 10, "height": 10},
                "regions": [{"box": [5, 0, 5, 10], "feature": [0.0] * dim}],
            }

        server, endpoint = _fake_provider(build)
        try:
            with pytest.raises(SchemaViolation):
                extract_external(noise_png(8, 8), self._spec(endpoint))
        finally:
            server.shutdown()

    def test_excess_regions_truncated(self):
        def build(headers, body):
            dim = int(headers["X-Feature-Dim"])
            return 200, {
                "image": {"width": 10, "height": 10},
                "regions": [
                    {"box": [0, 0, i + 1, 10], "feature": [float(i)] * dim}
                    for i in range(10)
                ],
            }

        server, endpoint = _fake_provider(build)
        try:
            rf = extract_external(noise_png(8, 8), self._spec(endpoint, max_regions=4))
            assert rf.n_regions == 4
            assert np.allclose(rf.features[:, 0], [0, 1, 2, 3])
        finally:
            server.shutdown()


class TestFeatureStore:
    def _images(self, n):
        return {f"img{i}": noise_png(12, 12, seed=i) for i in range(n)}

    def _counting_extractor(self, counter):
        def run(data, image_id):
            counter.append(image_id)
            return extract_grid(data, 4, 16, image_id)

        return run

    def test_cold_cache_extracts_everything(self, tmp_path):
        store = FeatureStore(str(tmp_path))
        calls = []
        images = self._images(10)
        cache_features(images, ExtractorSpec(), store,
                       extractor=self._counting_extractor(calls))
        assert len(calls) == 10

    def test_warm_cache_skips_everything(self, tmp_path):
        store = FeatureStore(str(tmp_path))
        images = self._images(5)
        spec = ExtractorSpec()
        calls = []
        cache_features(images, spec, store, extractor=self._counting_extractor(calls))
        calls.clear()
        cache_features(images, spec, store, extractor=self._counting_extractor(calls))
        assert calls == []

    def test_one_changed_byte_triggers_one_reextraction(self, tmp_path):
        store = FeatureStore(str(tmp_path))
        images = self._images(5)
        calls = []
        cache_features(images, ExtractorSpec(), store,
                       extractor=self._counting_extractor(calls))
        images["img2"] = noise_png(12, 12, seed=99)
        # oracle: exactly the ids whose content hash changed get re-extracted
        stale = [i for i in images if store.stored_hash(i) != content_hash(images[i])]
        calls.clear()
        cache_features(images, ExtractorSpec(), store,
                       extractor=self._counting_extractor(calls))
        assert sorted(calls) == sorted(stale) == ["img2"]

    def test_round_trip_exact(self, tmp_path):
        store = FeatureStore(str(tmp_path))
        rf = extract_grid(noise_png(16, 16, seed=1), 9, 24, image_id="pic")
        store.put(rf, "hash")
        back = store.get("pic")
        assert np.array_equal(back.features, rf.features)
        assert np.array_equal(back.boxes, rf.boxes)

    def test_failures_reported_not_dropped(self, tmp_path):
        store = FeatureStore(str(tmp_path))
        images = {"good": noise_png(8, 8), "bad": b"not an image"}
        extracted, failures = cache_features(images, ExtractorSpec(max_regions=4), store)
        assert extracted == ["good"]
        assert "bad" in failures

    def test_parallel_extraction(self, tmp_path):
        store = FeatureStore(str(tmp_path))
        images = self._images(8)
        extracted, failures = cache_features(
            images, ExtractorSpec(max_regions=4, feature_dim=16), store, workers=4
        )
        assert not failures and len(extracted) == 8
        assert all(store.get(i) is not None for i in images)
