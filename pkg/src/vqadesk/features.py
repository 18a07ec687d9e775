"""Region feature extraction and the on-disk feature store.

Two extractor kinds: a deterministic built-in grid extractor (zero
external dependencies, desk scale) and an external HTTP extractor
speaking a small wire protocol, so any detector implementation can be
plugged in.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import requests
from PIL import Image

from .errors import ExtractorUnavailable, SchemaViolation, UnreadableImage

DEFAULT_MAX_REGIONS = 36
DEFAULT_FEATURE_DIM = 2048


@dataclass
class RegionFeatures:
    image_id: str
    boxes: np.ndarray  # (N, 4) normalized x1, y1, x2, y2
    features: np.ndarray  # (N, D)
    n_regions: int

    def validate(self) -> None:
        boxes, feats = self.boxes, self.features
        if boxes.shape != (self.n_regions, 4):
            raise SchemaViolation(f"boxes shape {boxes.shape} != ({self.n_regions}, 4)")
        if feats.shape[0] != self.n_regions:
            raise SchemaViolation("features row count does not match n_regions")
        if not np.all(np.isfinite(feats)):
            raise SchemaViolation("non-finite feature values")
        if not np.all(np.isfinite(boxes)):
            raise SchemaViolation("non-finite box coordinates")
        x1, y1, x2, y2 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
        ok = (x1 >= 0) & (x1 < x2) & (x2 <= 1) & (y1 >= 0) & (y1 < y2) & (y2 <= 1)
        if not np.all(ok):
            bad = int(np.argmin(ok))
            raise SchemaViolation(f"box {bad} violates 0 <= x1 < x2 <= 1, 0 <= y1 < y2 <= 1")


@dataclass
class ExtractorSpec:
    kind: str = "builtin_grid"  # "builtin_grid" | "external"
    endpoint: str = ""
    max_regions: int = DEFAULT_MAX_REGIONS
    feature_dim: int = DEFAULT_FEATURE_DIM

    def __post_init__(self):
        if self.kind not in ("builtin_grid", "external"):
            raise ValueError(f"unknown extractor kind {self.kind!r}")
        if self.kind == "external" and not self.endpoint:
            raise ValueError("external extractor requires an endpoint")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "endpoint": self.endpoint,
            "max_regions": self.max_regions,
            "feature_dim": self.feature_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractorSpec":
        return cls(**d)


def decode_image(data: bytes) -> np.ndarray:
    """Decode to an HxWx3 float array in [0, 1]."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except Exception as exc:
        raise UnreadableImage(str(exc)) from exc
    return arr


def _cell_positional_encoding(cx: float, cy: float) -> np.ndarray:
    # Fixed sinusoidal encoding of the cell centre, 8 values.
    freqs = np.array([1.0, 2.0, 4.0, 8.0])
    return np.concatenate(
        [np.sin(math.pi * cx * freqs), np.sin(math.pi * cy * freqs)]
    ).astype(np.float64)


def extract_grid(
    image: np.ndarray | bytes,
    max_regions: int = DEFAULT_MAX_REGIONS,
    feature_dim: int = DEFAULT_FEATURE_DIM,
    image_id: str = "",
) -> RegionFeatures:
    """Deterministic k x k uniform-grid extractor.

    Each cell is one region; its feature vector is per-cell channel means
    and standard deviations plus a fixed positional encoding, tiled to
    the requested dimension. Pure function of (pixels, max_regions,
    feature_dim).
    """
    if isinstance(image, (bytes, bytearray)):
        image = decode_image(bytes(image))
    h, w = image.shape[:2]
    if h == 0 or w == 0:
        raise UnreadableImage("empty image")
    k = int(math.isqrt(max_regions))
    if k < 1:
        raise ValueError("max_regions must be >= 1")

    boxes = np.empty((k * k, 4), dtype=np.float64)
    feats = np.empty((k * k, feature_dim), dtype=np.float32)
    for row in range(k):
        for col in range(k):
            idx = row * k + col
            x1, x2 = col / k, (col + 1) / k
            y1, y2 = row / k, (row + 1) / k
            boxes[idx] = (x1, y1, x2, y2)
            ys = slice(int(round(y1 * h)), max(int(round(y2 * h)), int(round(y1 * h)) + 1))
            xs = slice(int(round(x1 * w)), max(int(round(x2 * w)), int(round(x1 * w)) + 1))
            cell = image[ys, xs].reshape(-1, 3).astype(np.float64)
            base = np.concatenate(
                [
                    cell.mean(axis=0),
                    cell.std(axis=0),
                    _cell_positional_encoding((x1 + x2) / 2, (y1 + y2) / 2),
                ]
            )
            reps = -(-feature_dim // base.size)
            feats[idx] = np.tile(base, reps)[:feature_dim].astype(np.float32)

    result = RegionFeatures(image_id, boxes, feats, k * k)
    result.validate()
    return result


def extract_external(image_bytes: bytes, spec: ExtractorSpec, image_id: str = "") -> RegionFeatures:
    """POST the raw image to an external extractor endpoint.

    The provider returns boxes in absolute pixels; they are normalized
    here and the region list truncated to max_regions.
    """
    assert spec.kind == "external"
    url = spec.endpoint.rstrip("/") + "/extract"
    headers = {
        "Content-Type": "application/octet-stream",
        "X-Max-Regions": str(spec.max_regions),
        "X-Feature-Dim": str(spec.feature_dim),
    }
    try:
        resp = requests.post(url, data=image_bytes, headers=headers, timeout=120)
    except requests.RequestException as exc:
        raise ExtractorUnavailable(f"extractor endpoint unreachable: {exc}") from exc
    if resp.status_code >= 500:
        raise ExtractorUnavailable(f"extractor returned HTTP {resp.status_code}")
    if resp.status_code != 200:
        raise SchemaViolation(f"extractor returned HTTP {resp.status_code}")

    try:
        doc = resp.json()
        width = float(doc["image"]["width"])
        height = float(doc["image"]["height"])
        regions = doc["regions"]
    except (ValueError, KeyError, TypeError) as exc:
        raise SchemaViolation(f"malformed extractor response: {exc}") from exc
    if width <= 0 or height <= 0 or not regions:
        raise SchemaViolation("extractor response has empty image size or no regions")

    regions = regions[: spec.max_regions]
    boxes = np.empty((len(regions), 4), dtype=np.float64)
    feats = np.empty((len(regions), spec.feature_dim), dtype=np.float32)
    for i, region in enumerate(regions):
        try:
            box = region["box"]
            feature = region["feature"]
        except (KeyError, TypeError) as exc:
            raise SchemaViolation(f"region {i} missing fields: {exc}") from exc
        if len(box) != 4:
            raise SchemaViolation(f"region {i} box must have 4 coordinates")
        if len(feature) != spec.feature_dim:
            raise SchemaViolation(
                f"region {i} feature length {len(feature)} != {spec.feature_dim}"
            )
        boxes[i] = (box[0] / width, box[1] / height, box[2] / width, box[3] / height)
        feats[i] = np.asarray(feature, dtype=np.float32)

    result = RegionFeatures(image_id, boxes, feats, len(regions))
    result.validate()
    return result


def extract(image_bytes: bytes, spec: ExtractorSpec, image_id: str = "") -> RegionFeatures:
    if spec.kind == "builtin_grid":
        return extract_grid(image_bytes, spec.max_regions, spec.feature_dim, image_id)
    return extract_external(image_bytes, spec, image_id)


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class FeatureStore:
    """One JSON record per image under <root>/<image_id>.feat.

    Cache keyed by source-image content hash, so re-uploads of identical
    bytes cost nothing. Writes are serialized; reads are lock-free.
    """

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)
        self._write_lock = threading.Lock()

    def _path(self, image_id: str) -> str:
        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in image_id)
        return os.path.join(self.root, f"{safe}.feat")

    def get(self, image_id: str) -> RegionFeatures | None:
        path = self._path(image_id)
        if not os.path.exists(path):
            return None
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return RegionFeatures(
            image_id=doc["image_id"],
            boxes=np.asarray(doc["boxes"], dtype=np.float64),
            features=np.asarray(doc["features"], dtype=np.float32),
            n_regions=doc["n_regions"],
        )

    def stored_hash(self, image_id: str) -> str | None:
        path = self._path(image_id)
        if not os.path.exists(path):
            return None
        with open(path, encoding="utf-8") as fh:
            return json.load(fh).get("content_hash")

    def put(self, rf: RegionFeatures, source_hash: str) -> None:
        doc = {
            "image_id": rf.image_id,
            "content_hash": source_hash,
            "n_regions": rf.n_regions,
            "boxes": rf.boxes.tolist(),
            "features": [[float(v) for v in row] for row in rf.features],
        }
        payload = json.dumps(doc)
        path = self._path(rf.image_id)
        with self._write_lock:
            fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(payload)
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise


def cache_features(
    images: dict[str, bytes],
    spec: ExtractorSpec,
    store: FeatureStore,
    workers: int = 1,
    extractor=None,
) -> tuple[list[str], dict[str, str]]:
    """Extract-and-cache for every image; skip records with matching hash.

    Returns (extracted image ids, failures mapping image_id -> message).
    `extractor` overrides the default dispatch, mainly for tests.
    """
    extractor = extractor or (lambda data, image_id: extract(data, spec, image_id))
    todo = []
    for image_id, data in images.items():
        if store.stored_hash(image_id) == content_hash(data):
            continue
        todo.append((image_id, data))

    failures: dict[str, str] = {}
    extracted: list[str] = []

    def work(item):
        image_id, data = item
        rf = extractor(data, image_id)
        rf.validate()
        store.put(rf, content_hash(data))
        return image_id

    if workers <= 1:
        for item in todo:
            try:
                extracted.append(work(item))
            except Exception as exc:
                failures[item[0]] = str(exc)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(work, item): item[0] for item in todo}
            for fut, image_id in futures.items():
                try:
                    extracted.append(fut.result())
                except Exception as exc:
                    failures[image_id] = str(exc)
    return extracted, failures
