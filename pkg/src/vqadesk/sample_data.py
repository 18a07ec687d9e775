"""Deterministic synthetic sample dataset.

Used for the downloadable "Sample Dataset", the sample evaluation panel,
and as a convenient fixture generator for scripts and tests. Images are
solid-background scenes with one colored shape; questions ask about
color and shape, so a desk-scale model can actually learn them.
"""

from __future__ import annotations

import csv
import io
import zipfile

from PIL import Image, ImageDraw

COLORS = {
    "red": (200, 30, 30),
    "green": (30, 160, 60),
    "blue": (40, 70, 200),
    "yellow": (220, 200, 40),
}
SHAPES = ("circle", "square")


def render_shape_image(color: str, shape: str, size: int = 96) -> bytes:
    img = Image.new("RGB", (size, size), (235, 235, 235))
    draw = ImageDraw.Draw(img)
    lo, hi = size // 4, 3 * size // 4
    if shape == "circle":
        draw.ellipse([lo, lo, hi, hi], fill=COLORS[color])
    else:
        draw.rectangle([lo, lo, hi, hi], fill=COLORS[color])
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def sample_images() -> dict[str, bytes]:
    return {
        f"{color}_{shape}": render_shape_image(color, shape)
        for color in COLORS
        for shape in SHAPES
    }


def sample_rows() -> list[tuple[str, str, str]]:
    rows = []
    for color in COLORS:
        for shape in SHAPES:
            image_id = f"{color}_{shape}"
            rows.append((image_id, "what color is the shape?", color))
            rows.append((image_id, "what shape is in the image?", shape))
    return rows


def sample_zip_bytes() -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        for image_id, data in sorted(sample_images().items()):
            zf.writestr(zipfile.ZipInfo(f"{image_id}.png"), data)
    return buf.getvalue()


def sample_csv_bytes(with_answers: bool = True) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf)
    if with_answers:
        writer.writerow(["image_id", "question"] + [f"answer{i}" for i in range(1, 11)])
        for image_id, question, answer in sample_rows():
            writer.writerow([image_id, question] + [answer] * 10)
    else:
        writer.writerow(["image_id", "question"])
        for image_id, question, _ in sample_rows():
            writer.writerow([image_id, question])
    return buf.getvalue().encode("utf-8")


def overfit_palette(n: int = 20) -> list[tuple[int, int, int]]:
    """Well-separated RGB corners/midpoints for the overfit fixture."""
    values = (0, 128, 255)
    palette = [(r, g, b) for r in values for g in values for b in values]
    return palette[:n]


def overfit_images(n: int = 20, size: int = 64) -> dict[str, bytes]:
    """n solid-color images whose grid features are maximally separable."""
    images = {}
    for i, rgb in enumerate(overfit_palette(n)):
        buf = io.BytesIO()
        Image.new("RGB", (size, size), rgb).save(buf, format="PNG")
        images[f"swatch{i:02d}"] = buf.getvalue()
    return images


def overfit_rows(n: int = 20) -> list[tuple[str, str, str]]:
    return [(f"swatch{i:02d}", "what is shown?", f"label{i:02d}") for i in range(n)]


def sample_eval_questions() -> list[str]:
    return ["what color is the shape?", "what shape is in the image?"]


def sample_eval_image() -> tuple[str, bytes]:
    return "blue_circle", render_shape_image("blue", "circle")
