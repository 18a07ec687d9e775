"""Answer-space discovery, the fine-tuning loop, and prediction.

Training optimizes per-label binary cross-entropy between
sigmoid(logits) and soft targets (min(matches/3, 1) against the ten
ground-truth answers), the standard VQAv2 fine-tuning recipe, with Adam.
Progress events scale into the [0.2, 0.95] band of the overall job.
"""

from __future__ import annotations

import threading
import uuid
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .data_pipeline import QAEntry, normalize_answer, soft_target
from .errors import Diverged, EmptyAnswerSpace, Interrupted
from .features import FeatureStore, RegionFeatures
from .modeling import (
    AttentionTrace,
    ModelConfig,
    Vocab,
    VqaModel,
    build_model,
    save_model,
    tokenize,
)

TRAIN_BAND = (0.2, 0.95)

JOB_STATES = (
    "queued",
    "preprocessing",
    "extracting_features",
    "training",
    "packaging",
    "done",
    "failed",
)


@dataclass
class AnswerSpace:
    labels: list[str]
    index: dict[str, int]
    min_count: int

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class TrainSpec:
    model_config: ModelConfig
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 5e-4
    seed: int = 0
    min_count: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs >= 1, batch_size >= 1, learning_rate > 0 required")


@dataclass
class FineTuneJob:
    job_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    state: str = "queued"
    progress: float = 0.0
    epoch: int = 0
    latest_loss: float = float("nan")
    message: str = ""
    artifact_path: str | None = None
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _cancel: threading.Event = field(default_factory=threading.Event, repr=False)

    def update(self, **kwargs) -> None:
        with self._lock:
            if "state" in kwargs and kwargs["state"] not in JOB_STATES:
                raise ValueError(f"unknown state {kwargs['state']!r}")
            if "progress" in kwargs:
                kwargs["progress"] = max(self.progress, min(1.0, kwargs["progress"]))
            for key, value in kwargs.items():
                setattr(self, key, value)

    def cancel(self) -> None:
        self._cancel.set()

    @property
    def cancelled(self) -> bool:
        return self._cancel.is_set()

    def snapshot(self) -> dict:
        with self._lock:
            loss = self.latest_loss
            return {
                "job_id": self.job_id,
                "state": self.state,
                "progress": self.progress,
                "epoch": self.epoch,
                "latest_loss": None if loss != loss else loss,
                "message": self.message,
                "artifact_path": self.artifact_path,
            }


def build_answer_space(dataset: list[QAEntry], min_count: int = 1) -> AnswerSpace:
    """Count normalized answers; keep those with count >= min_count.

    Labels ordered by descending frequency, then lexicographic, so the
    space is deterministic for a given dataset.
    """
    if not dataset:
        raise EmptyAnswerSpace("dataset is empty")
    counts = Counter(normalize_answer(a) for e in dataset for a in e.answers)
    kept = [(label, c) for label, c in counts.items() if c >= min_count]
    if not kept:
        raise EmptyAnswerSpace(f"no answer occurs >= {min_count} times")
    kept.sort(key=lambda item: (-item[1], item[0]))
    labels = [label for label, _ in kept]
    return AnswerSpace(labels, {label: i for i, label in enumerate(labels)}, min_count)


def make_targets(entry: QAEntry, space: AnswerSpace) -> np.ndarray:
    """Soft-target vector over the answer space for one entry."""
    target = np.zeros(len(space.labels), dtype=np.float32)
    for answer in set(normalize_answer(a) for a in entry.answers):
        idx = space.index.get(answer)
        if idx is not None:
            target[idx] = soft_target(entry.answers, answer)
    return target


def soft_accuracy(entry: QAEntry, predicted: str) -> float:
    return soft_target(entry.answers, predicted)


def train(
    dataset: list[QAEntry],
    store: FeatureStore,
    spec: TrainSpec,
    artifact_path: str,
    progress=None,
    job: FineTuneJob | None = None,
    extractor_spec: dict | None = None,
) -> tuple[VqaModel, Vocab, AnswerSpace]:
    """Fine-tune on the cleaned dataset; features must already be cached.

    `progress` is called with (fraction_in_[0.2,0.95], epoch, loss) at
    least once per epoch. Saves the artifact at `artifact_path`.
    """
    space = build_answer_space(dataset, spec.min_count)
    vocab = Vocab.build([e.question for e in dataset])
    config = replace(
        spec.model_config,
        vocab_size=len(vocab),
        n_answers=len(space),
        seed=spec.seed,
    )
    torch.manual_seed(spec.seed)
    model = build_model(config)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=spec.learning_rate, betas=(0.9, 0.999))

    regions: dict[str, RegionFeatures] = {}
    for entry in dataset:
        if entry.image_id not in regions:
            rf = store.get(entry.image_id)
            if rf is None:
                raise KeyError(f"no cached features for image '{entry.image_id}'")
            regions[entry.image_id] = rf

    token_ids = [tokenize(e.question, vocab, config.max_question_tokens) for e in dataset]
    targets = [torch.from_numpy(make_targets(e, space)) for e in dataset]

    rng = np.random.default_rng(spec.seed)
    n = len(dataset)
    steps_per_epoch = -(-n // spec.batch_size)
    total_steps = steps_per_epoch * spec.epochs
    lo, hi = TRAIN_BAND
    step = 0
    loss_value = float("nan")

    for epoch in range(1, spec.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, spec.batch_size):
            if job is not None and job.cancelled:
                raise Interrupted("fine-tuning cancelled")
            batch = order[start : start + spec.batch_size]
            optimizer.zero_grad()
            losses = []
            for i in batch:
                entry = dataset[i]
                result = model(token_ids[i], regions[entry.image_id])
                losses.append(
                    torch.nn.functional.binary_cross_entropy_with_logits(
                        result.logits, targets[i], reduction="sum"
                    )
                )
            loss = torch.stack(losses).mean()
            loss_value = float(loss.detach())
            if not np.isfinite(loss_value):
                raise Diverged(f"loss became non-finite at epoch {epoch}")
            loss.backward()
            optimizer.step()
            step += 1
        if progress is not None:
            progress(lo + (hi - lo) * step / total_steps, epoch, loss_value)

    model.eval()
    save_model(model, vocab, space.labels, artifact_path, extractor_spec=extractor_spec)
    return model, vocab, space


def predict(
    model: VqaModel,
    question: str,
    regions: RegionFeatures,
    vocab: Vocab,
    labels: list[str],
    k: int = 1,
) -> tuple[list[tuple[str, float]], AttentionTrace, object]:
    """Top-k answers with probabilities plus the attention trace.

    Ties broken by answer-space index (lower wins).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    model.eval()
    ids = tokenize(question, vocab, model.config.max_question_tokens)
    with torch.no_grad():
        result = model(ids, regions, need_trace=True)
    probs = torch.sigmoid(result.logits).double().cpu().numpy()
    order = np.lexsort((np.arange(len(probs)), -probs))[:k]
    ranked = [(labels[i], float(probs[i])) for i in order]
    return ranked, result.trace, result.token_map
