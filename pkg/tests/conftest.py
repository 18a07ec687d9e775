import csv
import io
import zipfile

import numpy as np
import pytest
from PIL import Image

from vqadesk.modeling import ModelConfig


def png_bytes(width: int, height: int, color=(120, 40, 40)) -> bytes:
    img = Image.new("RGB", (width, height), color)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def noise_png(width: int, height: int, seed: int = 0) -> bytes:
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def make_zip(entries: dict[str, bytes]) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name, data in entries.items():
            zf.writestr(name, data)
    return buf.getvalue()


def make_csv(rows: list[tuple], header: list[str] | None = None) -> bytes:
    if header is None:
        header = ["image_id", "question"] + [f"answer{i}" for i in range(1, 11)]
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow(list(row) + [""] * (len(header) - len(row)))
    return buf.getvalue().encode()


def qa_row(image_id: str, question: str, answers: list[str]) -> tuple:
    return tuple([image_id, question] + answers)


@pytest.fixture
def tiny_single_config():
    return ModelConfig(
        architecture="single_stream",
        hidden_dim=16,
        n_heads=2,
        feature_dim=24,
        max_question_tokens=8,
        max_regions=4,
        vocab_size=12,
        n_answers=5,
        layers=(2,),
        dropout=0.0,
        seed=7,
    )


@pytest.fixture
def tiny_dual_config():
    return ModelConfig(
        architecture="dual_stream",
        hidden_dim=16,
        n_heads=2,
        feature_dim=24,
        max_question_tokens=8,
        max_regions=4,
        vocab_size=12,
        n_answers=5,
        layers=(1, 1, 1),
        dropout=0.0,
        seed=7,
    )
