"""Attention aggregation and bounding-box annotation.

Sums attention mass received by each region token across layers, heads
and query positions, selects the top five regions, and draws their
boxes with darker strokes for higher-ranked regions.
"""

from __future__ import annotations

import io
import logging
import re
import zipfile
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw

from .errors import TokenMapMismatch
from .modeling import AttentionTrace, TokenMap

log = logging.getLogger(__name__)

# attention kinds whose keys are region tokens, per architecture
_INCLUDED_KINDS = {
    "single_stream": ("self",),
    "dual_stream": ("cross_lang_to_vision",),
}


@dataclass
class RegionScore:
    region_index: int
    score: float
    rank: int = 0


@dataclass
class AnnotationStyle:
    top_k: int = 5
    base_color: tuple[int, int, int] = (220, 20, 60)
    intensities: tuple[float, ...] = (1.0, 0.8, 0.6, 0.4, 0.25)
    line_width: int = 3
    label: bool = True

    def opacity(self, rank: int) -> float:
        if rank <= len(self.intensities):
            return self.intensities[rank - 1]
        # keep strictly decreasing past the configured levels
        return self.intensities[-1] * (0.85 ** (rank - len(self.intensities)))


def aggregate_per_key(trace: AttentionTrace, token_map: TokenMap) -> np.ndarray:
    """Summed attention per key position over all included matrices.

    Only non-padding query rows contribute; padding key columns carry
    zero mass by construction (masked before softmax).
    """
    kinds = _INCLUDED_KINDS[trace.architecture]
    entries = [e for e in trace.entries if e.kind in kinds]
    if not entries:
        raise TokenMapMismatch("trace contains no region-keyed attention matrices")
    width = entries[0].weights.shape[2]
    totals = np.zeros(width, dtype=np.float64)
    for entry in entries:
        if entry.weights.shape[2] != width:
            raise TokenMapMismatch("inconsistent key widths across included matrices")
        totals += entry.weights[:, entry.query_keep, :].sum(axis=(0, 1))
    if token_map.region_positions and token_map.region_positions[-1] >= width:
        raise TokenMapMismatch(
            f"region position {token_map.region_positions[-1]} exceeds key width {width}"
        )
    return totals


def aggregate_attention(trace: AttentionTrace, token_map: TokenMap) -> list[RegionScore]:
    """One aggregated score per region, in region order."""
    totals = aggregate_per_key(trace, token_map)
    return [
        RegionScore(region_index=i, score=float(totals[pos]))
        for i, pos in enumerate(token_map.region_positions)
    ]


def select_top(scores: list[RegionScore], k: int = 5) -> list[RegionScore]:
    """The min(k, N) highest scores, ties broken by lower region index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ordered = sorted(scores, key=lambda s: (-s.score, s.region_index))
    return [
        RegionScore(s.region_index, s.score, rank=i + 1)
        for i, s in enumerate(ordered[:k])
    ]


def _blend_color(base: tuple[int, int, int], opacity: float) -> tuple[int, int, int, int]:
    return (*base, int(round(255 * opacity)))


def annotate(
    image: bytes | Image.Image,
    boxes: np.ndarray,
    ranked: list[RegionScore],
    style: AnnotationStyle | None = None,
) -> bytes:
    """Draw the ranked regions' boxes on the image; returns PNG bytes.

    Rank 1 gets the most opaque stroke. Boxes falling outside the image
    after denormalization are clamped with a logged warning. Pixels
    outside strokes and labels are untouched.
    """
    style = style or AnnotationStyle()
    if isinstance(image, (bytes, bytearray)):
        image = Image.open(io.BytesIO(image))
    base = image.convert("RGBA")
    overlay = Image.new("RGBA", base.size, (0, 0, 0, 0))
    draw = ImageDraw.Draw(overlay)
    w, h = base.size

    for score in ranked:
        x1, y1, x2, y2 = boxes[score.region_index]
        px = [round(x1 * w), round(y1 * h), round(x2 * w), round(y2 * h)]
        # x2 == w is the expected right-edge convention, not an overflow
        if px[0] < 0 or px[1] < 0 or px[2] > w or px[3] > h:
            log.warning("box for region %d out of bounds, clamped", score.region_index)
        clamped = [
            min(max(px[0], 0), w - 1),
            min(max(px[1], 0), h - 1),
            min(max(px[2], 0), w - 1),
            min(max(px[3], 0), h - 1),
        ]
        color = _blend_color(style.base_color, style.opacity(score.rank))
        draw.rectangle(clamped, outline=color, width=style.line_width)
        if style.label:
            draw.text((clamped[0] + style.line_width + 1, clamped[1] + style.line_width + 1),
                      str(score.rank), fill=color)

    out = Image.alpha_composite(base, overlay).convert("RGB")
    buf = io.BytesIO()
    out.save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def sanitize_question(question: str, max_len: int = 100) -> str:
    name = re.sub(r"[^a-z0-9]+", "_", question.casefold()).strip("_")
    return name[:max_len]


@dataclass
class BatchAnnotation:
    question_id: int
    question: str
    image_id: str
    boxes: np.ndarray
    ranked: list[RegionScore]


def annotate_batch(
    items: list[BatchAnnotation],
    images: dict[str, bytes],
    style: AnnotationStyle | None = None,
) -> tuple[bytes, dict[int, str]]:
    """Annotate every prediction and package the PNGs into one ZIP.

    Entries are named <sanitized_question>__<question_id>.png. Failures
    are recorded in an errors.txt manifest inside the ZIP and returned;
    processing continues past them.
    """
    failures: dict[int, str] = {}
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        for item in items:
            name = f"{sanitize_question(item.question)}__{item.question_id}.png"
            try:
                png = annotate(images[item.image_id], item.boxes, item.ranked, style)
            except Exception as exc:
                failures[item.question_id] = str(exc)
                continue
            zf.writestr(zipfile.ZipInfo(name), png)
        if failures:
            manifest = "\n".join(
                f"question_id={qid}: {msg}" for qid, msg in sorted(failures.items())
            )
            zf.writestr(zipfile.ZipInfo("errors.txt"), manifest)
    return buf.getvalue(), failures
