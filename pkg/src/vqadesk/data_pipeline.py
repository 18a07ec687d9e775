"""Dataset ingestion and cleaning.

Takes the user's ZIP of images and CSV of questions/answers, applies the
three cleaning steps (answer auto-fill, duplicate removal, invalid
image-reference removal), and produces a validated internal dataset plus
a cleaning report and a banner-level validation outcome.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
import tempfile
import zipfile
from dataclasses import dataclass, field, asdict
from pathlib import PurePosixPath
from typing import BinaryIO

from PIL import Image

from .errors import EmptyFile, MalformedArchive, MissingColumn, NoAnswers

MAX_IMAGE_DIM = 1920
IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp"}
N_ANSWERS = 10

_WS = re.compile(r"\s+")


def normalize_text(s: str) -> str:
    """Trim and collapse internal whitespace."""
    return _WS.sub(" ", s.strip())


def normalize_answer(s: str) -> str:
    return normalize_text(s).casefold()


def question_key(image_id: str, question: str) -> tuple[str, str]:
    """Dedupe key: image id plus casefolded, whitespace-collapsed question."""
    return (image_id, normalize_text(question).casefold())


@dataclass
class ImageRecord:
    image_id: str
    filename: str
    width: int
    height: int
    status: str  # "valid" | "oversized" | "unreadable"


@dataclass
class RawQARow:
    image_id: str
    question: str
    answers: list[str]


@dataclass
class QAEntry:
    question_id: int
    image_id: str
    question: str
    answers: list[str]


@dataclass
class CleanReport:
    n_input_rows: int = 0
    n_autofilled: int = 0
    n_duplicates_removed: int = 0
    n_invalid_image_refs_removed: int = 0
    n_oversized_images: int = 0
    n_unreadable_images: int = 0
    n_output_entries: int = 0


@dataclass
class ValidationOutcome:
    level: str  # "error" | "warning" | "success"
    messages: list[str] = field(default_factory=list)


def ingest_images(archive: bytes | BinaryIO) -> tuple[list[ImageRecord], list[str]]:
    """Read every image entry from a ZIP, flattening nested folders.

    Returns the records plus warning messages (e.g. duplicate image ids,
    where the first occurrence wins).
    """
    if isinstance(archive, bytes):
        archive = io.BytesIO(archive)
    try:
        zf = zipfile.ZipFile(archive)
    except (zipfile.BadZipFile, OSError) as exc:
        raise MalformedArchive(f"cannot open ZIP archive: {exc}") from exc

    records: list[ImageRecord] = []
    warnings: list[str] = []
    seen: set[str] = set()
    with zf:
        for info in zf.infolist():
            if info.is_dir():
                continue
            name = PurePosixPath(info.filename.replace("\\", "/")).name
            stem, ext = os.path.splitext(name)
            if ext.lower() not in IMAGE_EXTENSIONS or not stem:
                continue
            if stem in seen:
                warnings.append(
                    f"duplicate image id '{stem}' ({info.filename}); first occurrence kept"
                )
                continue
            seen.add(stem)
            data = zf.read(info)
            try:
                with Image.open(io.BytesIO(data)) as img:
                    width, height = img.size
                status = (
                    "oversized"
                    if width > MAX_IMAGE_DIM or height > MAX_IMAGE_DIM
                    else "valid"
                )
            except Exception:
                width, height, status = 0, 0, "unreadable"
            records.append(ImageRecord(stem, name, width, height, status))
    return records, warnings


def parse_qa_csv(data: bytes | str) -> list[RawQARow]:
    """Parse the upload CSV: columns image_id, question, answer1..answer10."""
    if isinstance(data, bytes):
        data = data.decode("utf-8-sig")
    reader = csv.DictReader(io.StringIO(data))
    fields = reader.fieldnames or []
    for required in ("image_id", "question"):
        if required not in fields:
            raise MissingColumn(f"CSV is missing required column '{required}'")
    answer_cols = [c for c in fields if re.fullmatch(r"answer\d+", c)]
    answer_cols.sort(key=lambda c: int(c[6:]))

    rows: list[RawQARow] = []
    for rec in reader:
        answers = [
            (rec.get(c) or "").strip() for c in answer_cols
        ]
        answers = [a for a in answers if a]
        rows.append(
            RawQARow(
                image_id=(rec.get("image_id") or "").strip(),
                question=rec.get("question") or "",
                answers=answers,
            )
        )
    if not rows:
        raise EmptyFile("CSV contains no data rows")
    return rows


def autofill_answers(row: RawQARow) -> tuple[list[str], bool]:
    """Pad the answer list to exactly 10 by cyclic repetition."""
    answers = [a for a in (s.strip() for s in row.answers) if a]
    if not answers:
        raise NoAnswers(f"row for image '{row.image_id}' has no answers")
    if len(answers) >= N_ANSWERS:
        return answers[:N_ANSWERS], len(answers) != N_ANSWERS
    filled = [answers[i % len(answers)] for i in range(N_ANSWERS)]
    return filled, True


def dedupe(rows: list[RawQARow]) -> tuple[list[RawQARow], int]:
    """Collapse rows sharing (image_id, normalized question); first wins."""
    seen: set[tuple[str, str]] = set()
    kept: list[RawQARow] = []
    removed = 0
    for row in rows:
        key = question_key(row.image_id, row.question)
        if key in seen:
            removed += 1
        else:
            seen.add(key)
            kept.append(row)
    return kept, removed


def drop_invalid_refs(
    rows: list[RawQARow], images: list[ImageRecord]
) -> tuple[list[RawQARow], int]:
    """Remove rows whose image_id has no valid (in-size, readable) image."""
    valid_ids = {rec.image_id for rec in images if rec.status == "valid"}
    kept = [row for row in rows if row.image_id in valid_ids]
    return kept, len(rows) - len(kept)


def soft_target(answers: list[str], candidate: str) -> float:
    """Soft accuracy of a candidate against the ten ground-truth answers.

    min(matches / 3, 1) with casefold + whitespace normalization on both
    sides; the VQAv2 convention.
    """
    cand = normalize_answer(candidate)
    matches = sum(1 for a in answers if normalize_answer(a) == cand)
    return min(matches / 3.0, 1.0)


def _compute_outcome(
    images: list[ImageRecord],
    entries: list[QAEntry],
    report: CleanReport,
    warnings: list[str],
) -> ValidationOutcome:
    messages = list(warnings)
    n_valid_images = sum(1 for rec in images if rec.status == "valid")
    if report.n_oversized_images:
        messages.append(
            f"{report.n_oversized_images} image(s) exceed {MAX_IMAGE_DIM} pixels and were excluded"
        )
    if report.n_unreadable_images:
        messages.append(f"{report.n_unreadable_images} image(s) could not be decoded and were excluded")
    if n_valid_images == 0:
        messages.append("no valid image in the uploaded folder")
        return ValidationOutcome("error", messages)
    if not entries:
        messages.append("no valid question/answer entries remain after cleaning")
        return ValidationOutcome("error", messages)
    if report.n_oversized_images or report.n_unreadable_images:
        messages.append("you can fine-tune without those images or resubmit")
        return ValidationOutcome("warning", messages)
    messages.append(f"dataset ready: {len(entries)} entries over {n_valid_images} images")
    return ValidationOutcome("success", messages)


def build_dataset(
    archive: bytes | BinaryIO, qa_csv: bytes | str
) -> tuple[list[QAEntry], list[ImageRecord], CleanReport, ValidationOutcome]:
    """Run the full cleaning pipeline.

    Order: ingest images -> parse CSV -> dedupe -> drop invalid image
    refs -> auto-fill answers. Rows with zero answers are dropped and
    counted under invalid refs so the report identity holds.
    """
    report = CleanReport()
    try:
        images, warnings = ingest_images(archive)
        rows = parse_qa_csv(qa_csv)
    except (MalformedArchive, MissingColumn, EmptyFile) as exc:
        return [], [], report, ValidationOutcome("error", [str(exc)])

    report.n_oversized_images = sum(1 for r in images if r.status == "oversized")
    report.n_unreadable_images = sum(1 for r in images if r.status == "unreadable")
    report.n_input_rows = len(rows)

    rows, report.n_duplicates_removed = dedupe(rows)
    rows, report.n_invalid_image_refs_removed = drop_invalid_refs(rows, images)

    entries: list[QAEntry] = []
    for row in rows:
        try:
            answers, filled = autofill_answers(row)
        except NoAnswers:
            report.n_invalid_image_refs_removed += 1
            continue
        if filled:
            report.n_autofilled += 1
        entries.append(
            QAEntry(
                question_id=len(entries),
                image_id=row.image_id,
                question=normalize_text(row.question),
                answers=answers,
            )
        )
    report.n_output_entries = len(entries)

    outcome = _compute_outcome(images, entries, report, warnings)
    return entries, images, report, outcome


# --- persistence ---

def dataset_to_json(entries: list[QAEntry]) -> dict:
    """Internal dataset format: parallel questions and annotations lists."""
    return {
        "questions": [
            {"question_id": e.question_id, "image_id": e.image_id, "question": e.question}
            for e in entries
        ],
        "annotations": [
            {"question_id": e.question_id, "image_id": e.image_id, "answers": e.answers}
            for e in entries
        ],
    }


def dataset_from_json(doc: dict) -> list[QAEntry]:
    answers_by_id = {a["question_id"]: a["answers"] for a in doc["annotations"]}
    return [
        QAEntry(q["question_id"], q["image_id"], q["question"], answers_by_id[q["question_id"]])
        for q in doc["questions"]
    ]


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(entries: list[QAEntry], path: str) -> None:
    """Atomic write so a concurrent reader never sees a partial file."""
    _atomic_write_text(path, json.dumps(dataset_to_json(entries), sort_keys=True, indent=1))


def load_dataset(path: str) -> list[QAEntry]:
    with open(path, encoding="utf-8") as fh:
        return dataset_from_json(json.load(fh))


def save_report(report: CleanReport, path: str) -> None:
    _atomic_write_text(path, json.dumps(asdict(report), sort_keys=True, indent=1))
