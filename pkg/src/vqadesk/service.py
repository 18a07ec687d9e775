"""HTTP API binding the pipeline, models and visualizer into one workflow.

upload dataset -> pick model -> fine-tune with polled progress ->
sample / single / batch evaluation with downloadable annotated results.
All state lives under one data directory keyed by generated ids; there
is no database.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import threading
import uuid
import zipfile
from dataclasses import dataclass, field, asdict
from pathlib import PurePosixPath

from fastapi import FastAPI, File, Form, HTTPException, Request, UploadFile
from fastapi.responses import FileResponse, JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from . import attention_viz, data_pipeline, sample_data
from .data_pipeline import (
    MAX_IMAGE_DIM,
    build_dataset,
    load_dataset,
    parse_qa_csv,
    save_dataset,
    save_report,
)
from .errors import EmptyFile, EmptyQuestion, MalformedArchive, MissingColumn, UnreadableImage
from .features import ExtractorSpec, FeatureStore, cache_features, decode_image, extract
from .finetune import FineTuneJob, TrainSpec, predict, train
from .modeling import ModelConfig, load_model

log = logging.getLogger(__name__)

# Fixed error-code enumeration; no bare 500s for anticipated failures.
ERROR_CODES = (
    "MISSING_PART",
    "PAYLOAD_TOO_LARGE",
    "DATASET_INVALID",
    "DATASET_NOT_FOUND",
    "MODEL_NOT_SELECTED",
    "JOB_ALREADY_RUNNING",
    "JOB_NOT_FOUND",
    "MODEL_NOT_READY",
    "IMAGE_INVALID",
    "EMPTY_QUESTION",
    "NO_VALID_ENTRIES",
    "SAMPLE_UNAVAILABLE",
    "FILE_NOT_FOUND",
)

MODEL_CATALOG = [
    {
        "id": "visualbert",
        "display_name": "VisualBERT-style (single-stream)",
        "architecture": "single_stream",
    },
    {
        "id": "lxmert",
        "display_name": "LXMERT-style (dual-stream)",
        "architecture": "dual_stream",
    },
]

TERMINAL_STATES = ("done", "failed")


@dataclass
class ServerConfig:
    data_dir: str = "./vqadesk-data"
    port: int = 8000
    extractor: ExtractorSpec = field(default_factory=ExtractorSpec)
    max_zip_bytes: int = 512 * 1024 * 1024
    max_csv_bytes: int = 10 * 1024 * 1024
    default_epochs: int = 10
    default_batch_size: int = 32
    default_learning_rate: float = 5e-4
    frontend_dir: str | None = None

    @classmethod
    def from_env(cls, env=os.environ) -> "ServerConfig":
        kind = env.get("VQADESK_EXTRACTOR", "builtin_grid")
        extractor = ExtractorSpec(
            kind=kind,
            endpoint=env.get("VQADESK_EXTRACTOR_ENDPOINT", ""),
            max_regions=int(env.get("VQADESK_MAX_REGIONS", 36)),
            feature_dim=int(env.get("VQADESK_FEATURE_DIM", 2048)),
        )
        return cls(
            data_dir=env.get("VQADESK_DATA_DIR", "./vqadesk-data"),
            port=int(env.get("VQADESK_PORT", 8000)),
            extractor=extractor,
            max_zip_bytes=int(env.get("VQADESK_ZIP_CAP", 512 * 1024 * 1024)),
            max_csv_bytes=int(env.get("VQADESK_CSV_CAP", 10 * 1024 * 1024)),
            default_epochs=int(env.get("VQADESK_EPOCHS", 10)),
            default_batch_size=int(env.get("VQADESK_BATCH_SIZE", 32)),
            default_learning_rate=float(env.get("VQADESK_LEARNING_RATE", 5e-4)),
            frontend_dir=env.get("VQADESK_FRONTEND_DIR"),
        )

    def default_train_spec(self, architecture: str) -> dict:
        return {
            "architecture": architecture,
            "hidden_dim": 128,
            "n_heads": 4,
            "layers": [4] if architecture == "single_stream" else [2, 2, 2],
            "dropout": 0.1,
            "epochs": self.default_epochs,
            "batch_size": self.default_batch_size,
            "learning_rate": self.default_learning_rate,
            "max_regions": self.extractor.max_regions,
            "feature_dim": self.extractor.feature_dim,
        }


def api_error(status: int, code: str, message: str) -> HTTPException:
    assert code in ERROR_CODES
    return HTTPException(status, detail={"code": code, "message": message})


def _image_bytes_from_zip(zip_bytes: bytes) -> dict[str, bytes]:
    """Raw bytes per image id, flattening folders; first occurrence wins."""
    out: dict[str, bytes] = {}
    try:
        zf = zipfile.ZipFile(io.BytesIO(zip_bytes))
    except (zipfile.BadZipFile, OSError) as exc:
        raise MalformedArchive(str(exc)) from exc
    with zf:
        for info in zf.infolist():
            if info.is_dir():
                continue
            name = PurePosixPath(info.filename.replace("\\", "/")).name
            stem, ext = os.path.splitext(name)
            if ext.lower() not in data_pipeline.IMAGE_EXTENSIONS or not stem:
                continue
            out.setdefault(stem, zf.read(info))
    return out


class AppState:
    def __init__(self, config: ServerConfig):
        self.config = config
        self.data_dir = os.path.abspath(config.data_dir)
        os.makedirs(self.data_dir, exist_ok=True)
        self.jobs: dict[str, FineTuneJob] = {}
        self.artifacts: dict[str, str] = {}  # job_id -> artifact path
        self.latest_job_id: str | None = None
        self.job_lock = threading.Lock()
        self.model_cache: dict[str, tuple] = {}
        self.model_cache_lock = threading.Lock()

    def path(self, *parts: str) -> str:
        return os.path.join(self.data_dir, *parts)

    def file_url(self, path: str) -> str:
        rel = os.path.relpath(path, self.data_dir).replace(os.sep, "/")
        return f"/files/{rel}"

    def active_job(self) -> FineTuneJob | None:
        for job in self.jobs.values():
            if job.state not in TERMINAL_STATES:
                return job
        return None

    def load_artifact(self, path: str):
        with self.model_cache_lock:
            cached = self.model_cache.get(path)
            if cached is None:
                cached = load_model(path)
                self.model_cache[path] = cached
        return cached


def create_app(config: ServerConfig | None = None) -> FastAPI:
    config = config or ServerConfig.from_env()
    app = FastAPI(title="vqadesk", version="0.1.0")
    state = AppState(config)
    app.state.vqadesk = state

    @app.exception_handler(HTTPException)
    async def handle_http_error(request: Request, exc: HTTPException):
        detail = exc.detail
        if isinstance(detail, dict) and "code" in detail:
            body = {"code": detail["code"], "http_status": exc.status_code,
                    "message": detail["message"]}
            body.update({k: v for k, v in detail.items() if k not in body})
        else:
            body = {"code": "ERROR", "http_status": exc.status_code, "message": str(detail)}
        return JSONResponse(status_code=exc.status_code, content=body)

    # ---- dataset upload ----

    @app.post("/api/dataset")
    async def upload_dataset(images: UploadFile = File(None), qa: UploadFile = File(None)):
        if images is None or qa is None:
            raise api_error(400, "MISSING_PART", "both an images ZIP and a QA CSV are required")
        zip_bytes = await images.read()
        csv_bytes = await qa.read()
        if len(zip_bytes) > config.max_zip_bytes:
            raise api_error(413, "PAYLOAD_TOO_LARGE", "images ZIP exceeds the upload cap")
        if len(csv_bytes) > config.max_csv_bytes:
            raise api_error(413, "PAYLOAD_TOO_LARGE", "CSV exceeds the upload cap")

        entries, records, report, outcome = build_dataset(zip_bytes, csv_bytes)
        banner = {"level": outcome.level, "messages": outcome.messages}
        if outcome.level == "error":
            return JSONResponse(
                status_code=422,
                content={
                    "code": "DATASET_INVALID",
                    "http_status": 422,
                    "dataset_id": None,
                    "banner": banner,
                    "report": asdict(report),
                },
            )

        dataset_id = uuid.uuid4().hex
        root = state.path("datasets", dataset_id)
        os.makedirs(os.path.join(root, "images"), exist_ok=True)
        save_dataset(entries, os.path.join(root, "dataset.json"))
        save_report(report, os.path.join(root, "report.json"))
        valid_ids = {r.image_id for r in records if r.status == "valid"}
        for image_id, data in _image_bytes_from_zip(zip_bytes).items():
            if image_id in valid_ids:
                with open(os.path.join(root, "images", f"{image_id}.bin"), "wb") as fh:
                    fh.write(data)
        return {"dataset_id": dataset_id, "banner": banner, "report": asdict(report)}

    # ---- model catalog ----

    @app.get("/api/models")
    def list_models():
        return [
            {**entry, "defaults": config.default_train_spec(entry["architecture"])}
            for entry in MODEL_CATALOG
        ]

    # ---- fine-tuning ----

    def _train_spec(architecture: str, overrides: dict) -> TrainSpec:
        defaults = config.default_train_spec(architecture)
        defaults.update(overrides or {})
        model_config = ModelConfig(
            architecture=architecture,
            hidden_dim=int(defaults["hidden_dim"]),
            n_heads=int(defaults["n_heads"]),
            feature_dim=int(defaults["feature_dim"]),
            max_question_tokens=int(defaults.get("max_question_tokens", 20)),
            max_regions=int(defaults["max_regions"]),
            vocab_size=0,  # filled in by train() from the dataset
            n_answers=0,
            layers=tuple(defaults["layers"]),
            dropout=float(defaults["dropout"]),
            seed=int(defaults.get("seed", 0)),
        )
        return TrainSpec(
            model_config=model_config,
            epochs=int(defaults["epochs"]),
            batch_size=int(defaults["batch_size"]),
            learning_rate=float(defaults["learning_rate"]),
            seed=int(defaults.get("seed", 0)),
            min_count=int(defaults.get("min_count", 1)),
        )

    def _run_finetune(job: FineTuneJob, dataset_id: str, spec: TrainSpec):
        try:
            root = state.path("datasets", dataset_id)
            job.update(state="preprocessing", progress=0.02, message="loading dataset")
            dataset = load_dataset(os.path.join(root, "dataset.json"))
            images: dict[str, bytes] = {}
            image_dir = os.path.join(root, "images")
            for name in os.listdir(image_dir):
                with open(os.path.join(image_dir, name), "rb") as fh:
                    images[os.path.splitext(name)[0]] = fh.read()
            job.update(progress=0.1)

            job.update(state="extracting_features", message="extracting region features")
            store = FeatureStore(os.path.join(root, "features"))
            _, failures = cache_features(images, config.extractor, store)
            needed = {e.image_id for e in dataset}
            missing = sorted(needed & set(failures))
            if missing:
                raise RuntimeError(
                    f"feature extraction failed for {len(missing)} image(s): "
                    + "; ".join(f"{i}: {failures[i]}" for i in missing[:5])
                )
            job.update(progress=0.2)

            job.update(state="training", message="fine-tuning")

            def on_progress(fraction, epoch, loss):
                job.update(progress=fraction, epoch=epoch, latest_loss=loss)

            os.makedirs(state.path("artifacts"), exist_ok=True)
            artifact_path = state.path("artifacts", f"{job.job_id}.model")
            train(
                dataset,
                store,
                spec,
                artifact_path,
                progress=on_progress,
                job=job,
                extractor_spec=config.extractor.to_dict(),
            )

            job.update(state="packaging", progress=0.97, message="packaging artifact")
            state.artifacts[job.job_id] = artifact_path
            state.latest_job_id = job.job_id
            job.update(state="done", progress=1.0, message="fine-tuning complete",
                       artifact_path=artifact_path)
        except Exception as exc:
            log.exception("fine-tune job %s failed", job.job_id)
            job.update(state="failed", message=str(exc))

    @app.post("/api/finetune", status_code=202)
    async def start_finetune(body: dict):
        model_id = body.get("model_id")
        catalog = {entry["id"]: entry for entry in MODEL_CATALOG}
        if not model_id or model_id not in catalog:
            raise api_error(400, "MODEL_NOT_SELECTED", "please select a pre-trained model")
        dataset_id = body.get("dataset_id") or ""
        if not os.path.exists(state.path("datasets", dataset_id, "dataset.json")):
            raise api_error(404, "DATASET_NOT_FOUND", f"dataset '{dataset_id}' not found")
        spec = _train_spec(catalog[model_id]["architecture"], body.get("overrides") or {})

        with state.job_lock:
            if state.active_job() is not None:
                raise api_error(409, "JOB_ALREADY_RUNNING",
                                "a fine-tuning job is already running")
            job = FineTuneJob()
            state.jobs[job.job_id] = job
        thread = threading.Thread(
            target=_run_finetune, args=(job, dataset_id, spec), daemon=True
        )
        thread.start()
        return {"job_id": job.job_id}

    @app.get("/api/finetune/{job_id}")
    def job_status(job_id: str):
        job = state.jobs.get(job_id)
        if job is None:
            raise api_error(404, "JOB_NOT_FOUND", f"job '{job_id}' not found")
        return job.snapshot()

    # ---- evaluation ----

    def _resolve_artifact(job_id: str | None):
        if job_id:
            path = state.artifacts.get(job_id)
            if path is None:
                raise api_error(404, "MODEL_NOT_READY",
                                f"job '{job_id}' has no finished artifact")
        else:
            if state.latest_job_id is None:
                raise api_error(404, "MODEL_NOT_READY", "no fine-tuned model is available yet")
            path = state.artifacts[state.latest_job_id]
        return state.load_artifact(path)

    def _eval_one(model, vocab, labels, extractor_spec, image_bytes, image_id, question):
        spec = ExtractorSpec.from_dict(extractor_spec) if extractor_spec else config.extractor
        regions = extract(image_bytes, spec, image_id)
        ranked_answers, trace, token_map = predict(model, question, regions, vocab, labels, k=1)
        scores = attention_viz.aggregate_attention(trace, token_map)
        top = attention_viz.select_top(scores, k=5)
        return ranked_answers[0], regions, top

    @app.post("/api/eval/single")
    async def eval_single(
        image: UploadFile = File(None),
        question: str = Form(""),
        job_id: str = Form(None),
    ):
        if image is None:
            raise api_error(400, "MISSING_PART", "an image file is required")
        model, vocab, labels, extractor_spec = _resolve_artifact(job_id)
        if not question.strip():
            raise api_error(400, "EMPTY_QUESTION", "a question is required")
        data = await image.read()
        try:
            pixels = decode_image(data)
        except UnreadableImage:
            raise api_error(422, "IMAGE_INVALID", "the image could not be decoded")
        h, w = pixels.shape[:2]
        if w > MAX_IMAGE_DIM or h > MAX_IMAGE_DIM:
            raise api_error(
                422, "IMAGE_INVALID",
                f"image is {w}x{h}; both sides must be within {MAX_IMAGE_DIM} pixels",
            )
        try:
            (answer, probability), regions, top = _eval_one(
                model, vocab, labels, extractor_spec, data, "upload", question
            )
        except EmptyQuestion:
            raise api_error(400, "EMPTY_QUESTION", "the question contains no words")
        png = attention_viz.annotate(data, regions.boxes, top)
        os.makedirs(state.path("results"), exist_ok=True)
        out_path = state.path("results", f"single_{uuid.uuid4().hex}.png")
        with open(out_path, "wb") as fh:
            fh.write(png)
        return {
            "answer": answer,
            "probability": probability,
            "annotated_image_url": state.file_url(out_path),
        }

    @app.post("/api/eval/batch")
    async def eval_batch(
        images: UploadFile = File(None),
        questions: UploadFile = File(None),
        job_id: str = Form(None),
    ):
        if images is None or questions is None:
            raise api_error(400, "MISSING_PART", "both an images ZIP and a questions CSV are required")
        model, vocab, labels, extractor_spec = _resolve_artifact(job_id)
        zip_bytes = await images.read()
        csv_bytes = await questions.read()
        if len(zip_bytes) > config.max_zip_bytes or len(csv_bytes) > config.max_csv_bytes:
            raise api_error(413, "PAYLOAD_TOO_LARGE", "upload exceeds the configured cap")

        try:
            records, _ = data_pipeline.ingest_images(zip_bytes)
            rows = parse_qa_csv(csv_bytes)
            image_bytes = _image_bytes_from_zip(zip_bytes)
        except (MalformedArchive, MissingColumn, EmptyFile) as exc:
            raise api_error(422, "NO_VALID_ENTRIES", str(exc))

        valid_ids = {r.image_id for r in records if r.status == "valid"}
        n_failed = 0
        results = []
        annotations = []
        spec = ExtractorSpec.from_dict(extractor_spec) if extractor_spec else config.extractor
        region_cache: dict[str, object] = {}
        question_id = 0
        for row in rows:
            q = data_pipeline.normalize_text(row.question)
            if not q or row.image_id not in valid_ids:
                n_failed += 1
                continue
            try:
                regions = region_cache.get(row.image_id)
                if regions is None:
                    regions = extract(image_bytes[row.image_id], spec, row.image_id)
                    region_cache[row.image_id] = regions
                ranked_answers, trace, token_map = predict(model, q, regions, vocab, labels, k=1)
                scores = attention_viz.aggregate_attention(trace, token_map)
                top = attention_viz.select_top(scores, k=5)
            except Exception as exc:
                log.warning("batch row for image %s failed: %s", row.image_id, exc)
                n_failed += 1
                continue
            answer, probability = ranked_answers[0]
            results.append((question_id, row.image_id, q, answer, probability))
            annotations.append(
                attention_viz.BatchAnnotation(question_id, q, row.image_id, regions.boxes, top)
            )
            question_id += 1

        if not results:
            raise api_error(422, "NO_VALID_ENTRIES",
                            "no valid image or question entry in the dataset")

        eval_id = uuid.uuid4().hex
        out_dir = state.path("results", eval_id)
        os.makedirs(out_dir, exist_ok=True)
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["question_id", "image_id", "question", "predicted_answer", "probability"])
        for rec in results:
            writer.writerow(rec)
        csv_path = os.path.join(out_dir, "results.csv")
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())

        zip_data, failures = attention_viz.annotate_batch(annotations, image_bytes)
        zip_path = os.path.join(out_dir, "annotated.zip")
        with open(zip_path, "wb") as fh:
            fh.write(zip_data)
        return {
            "results_csv_url": state.file_url(csv_path),
            "annotated_zip_url": state.file_url(zip_path),
            "n_processed": len(results),
            "n_failed": n_failed + len(failures),
        }

    # ---- sample assets ----

    @app.get("/api/sample")
    def get_sample():
        try:
            os.makedirs(state.path("sample"), exist_ok=True)
            image_id, data = sample_data.sample_eval_image()
            path = state.path("sample", f"{image_id}.png")
            if not os.path.exists(path):
                with open(path, "wb") as fh:
                    fh.write(data)
        except Exception as exc:
            raise api_error(503, "SAMPLE_UNAVAILABLE", f"sample assets missing: {exc}")
        return {
            "image_id": image_id,
            "image_url": state.file_url(path),
            "questions": sample_data.sample_eval_questions(),
        }

    @app.get("/api/sample-dataset/images.zip")
    def sample_dataset_zip():
        return Response(sample_data.sample_zip_bytes(), media_type="application/zip",
                        headers={"Content-Disposition": "attachment; filename=images.zip"})

    @app.get("/api/sample-dataset/qa.csv")
    def sample_dataset_csv():
        return Response(sample_data.sample_csv_bytes(), media_type="text/csv",
                        headers={"Content-Disposition": "attachment; filename=qa.csv"})

    # ---- file serving ----

    @app.get("/files/{path:path}")
    def serve_file(path: str):
        full = os.path.abspath(os.path.join(state.data_dir, path))
        if not full.startswith(state.data_dir + os.sep) or not os.path.isfile(full):
            raise api_error(404, "FILE_NOT_FOUND", "no such file")
        return FileResponse(full)

    if config.frontend_dir and os.path.isdir(config.frontend_dir):
        app.mount("/", StaticFiles(directory=config.frontend_dir, html=True), name="ui")

    return app
