#!/usr/bin/env python3
"""Train both architectures on the 20-swatch fixture and report soft accuracy.

A quick smoke test that the full pipeline (grid extraction, training,
artifact save, prediction) works on this machine. Mirrors the overfit
acceptance criterion.
"""

import argparse
import tempfile
import time

from vqadesk import sample_data
from vqadesk.data_pipeline import QAEntry
from vqadesk.features import ExtractorSpec, FeatureStore, cache_features
from vqadesk.finetune import TrainSpec, predict, soft_accuracy, train
from vqadesk.modeling import ModelConfig


def build_spec(architecture, epochs, seed):
    config = ModelConfig(
        architecture=architecture,
        hidden_dim=64,
        n_heads=4,
        feature_dim=16,
        max_question_tokens=8,
        max_regions=4,
        layers=(2,) if architecture == "single_stream" else (1, 1, 1),
        dropout=0.0,
        seed=seed,
    )
    return TrainSpec(model_config=config, epochs=epochs, batch_size=2,
                     learning_rate=1e-3, seed=seed)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    workdir = tempfile.mkdtemp(prefix="vqadesk-overfit-")
    images = sample_data.overfit_images()
    store = FeatureStore(f"{workdir}/features")
    cache_features(images, ExtractorSpec(max_regions=4, feature_dim=16), store)
    dataset = [
        QAEntry(i, image_id, question, [answer] * 10)
        for i, (image_id, question, answer) in enumerate(sample_data.overfit_rows())
    ]

    for architecture in ("single_stream", "dual_stream"):
        started = time.monotonic()
        losses = []
        model, vocab, space = train(
            dataset, store, build_spec(architecture, args.epochs, args.seed),
            f"{workdir}/{architecture}.model",
            progress=lambda f, e, l: losses.append(l),
        )
        correct = 0.0
        for e in dataset:
            ranked, _, _ = predict(model, e.question, store.get(e.image_id),
                                   vocab, space.labels, k=1)
            correct += soft_accuracy(e, ranked[0][0])
        elapsed = time.monotonic() - started
        print(f"{architecture}: loss {losses[0]:.3f} -> {losses[-1]:.3f}, "
              f"soft accuracy {correct / len(dataset):.3f} "
              f"({elapsed:.1f}s, artifact in {workdir})")


if __name__ == "__main__":
    main()
