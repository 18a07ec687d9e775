"""Command-line entry points: serve the API, or run the pipeline headless."""

from __future__ import annotations

import csv
import json
import os
import sys
from dataclasses import asdict

import click


@click.group()
def main():
    """Desk-scale VQA platform."""


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=None, type=int, help="Overrides VQADESK_PORT.")
@click.option("--data-dir", default=None, help="Overrides VQADESK_DATA_DIR.")
@click.option("--frontend-dir", default=None, help="Serve built UI assets from this directory.")
def serve(host, port, data_dir, frontend_dir):
    """Start the HTTP API server."""
    import uvicorn

    from .service import ServerConfig, create_app

    config = ServerConfig.from_env()
    if port is not None:
        config.port = port
    if data_dir is not None:
        config.data_dir = data_dir
    if frontend_dir is not None:
        config.frontend_dir = frontend_dir
    uvicorn.run(create_app(config), host=host, port=config.port)


@main.command()
@click.argument("images_zip", type=click.Path(exists=True))
@click.argument("qa_csv", type=click.Path(exists=True))
@click.option("--out", default="dataset.json", show_default=True, help="Cleaned dataset output path.")
@click.option("--report", "report_path", default="clean_report.json", show_default=True)
def prep(images_zip, qa_csv, out, report_path):
    """Run the cleaning pipeline headless on a ZIP + CSV pair."""
    from .data_pipeline import build_dataset, save_dataset, save_report

    with open(images_zip, "rb") as fh:
        zip_bytes = fh.read()
    with open(qa_csv, "rb") as fh:
        csv_bytes = fh.read()
    entries, _, report, outcome = build_dataset(zip_bytes, csv_bytes)
    click.echo(f"[{outcome.level}] " + "; ".join(outcome.messages))
    if outcome.level == "error":
        sys.exit(1)
    save_dataset(entries, out)
    save_report(report, report_path)
    click.echo(f"wrote {len(entries)} entries to {out}; report in {report_path}")


@main.command("eval-batch")
@click.argument("artifact", type=click.Path(exists=True))
@click.argument("images_zip", type=click.Path(exists=True))
@click.argument("questions_csv", type=click.Path(exists=True))
@click.option("--out-dir", default="eval_out", show_default=True)
def eval_batch(artifact, images_zip, questions_csv, out_dir):
    """Headless batch evaluation: predictions CSV + annotated image ZIP."""
    from . import attention_viz, data_pipeline
    from .features import ExtractorSpec, extract
    from .finetune import predict
    from .modeling import load_model
    from .service import _image_bytes_from_zip

    model, vocab, labels, extractor_spec = load_model(artifact)
    spec = ExtractorSpec.from_dict(extractor_spec) if extractor_spec else ExtractorSpec()

    with open(images_zip, "rb") as fh:
        zip_bytes = fh.read()
    with open(questions_csv, "rb") as fh:
        csv_bytes = fh.read()
    records, _ = data_pipeline.ingest_images(zip_bytes)
    valid_ids = {r.image_id for r in records if r.status == "valid"}
    rows = data_pipeline.parse_qa_csv(csv_bytes)
    image_bytes = _image_bytes_from_zip(zip_bytes)

    os.makedirs(out_dir, exist_ok=True)
    results = []
    annotations = []
    cache = {}
    n_failed = 0
    for row in rows:
        question = data_pipeline.normalize_text(row.question)
        if not question or row.image_id not in valid_ids:
            n_failed += 1
            continue
        regions = cache.get(row.image_id)
        if regions is None:
            regions = cache[row.image_id] = extract(image_bytes[row.image_id], spec, row.image_id)
        ranked, trace, token_map = predict(model, question, regions, vocab, labels, k=1)
        top = attention_viz.select_top(
            attention_viz.aggregate_attention(trace, token_map), k=5
        )
        qid = len(results)
        results.append((qid, row.image_id, question, ranked[0][0], ranked[0][1]))
        annotations.append(
            attention_viz.BatchAnnotation(qid, question, row.image_id, regions.boxes, top)
        )

    csv_path = os.path.join(out_dir, "results.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["question_id", "image_id", "question", "predicted_answer", "probability"])
        writer.writerows(results)
    zip_data, failures = attention_viz.annotate_batch(annotations, image_bytes)
    zip_path = os.path.join(out_dir, "annotated.zip")
    with open(zip_path, "wb") as fh:
        fh.write(zip_data)
    click.echo(json.dumps({
        "results_csv": csv_path,
        "annotated_zip": zip_path,
        "n_processed": len(results),
        "n_failed": n_failed + len(failures),
    }))


if __name__ == "__main__":
    main()
