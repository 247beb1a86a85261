"""End-to-end workflows shared by the CLI and the acceptance tests."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig, write_run_config
from .data_io import Dataset, MetricsReport, Sample, parse_manifest
from .encoders import Vocab, split_words
from .errors import DataError
from .model import VARIANTS, Encoded, ModelConfig, prepare_sample
from .training import (
    Checkpoint,
    TrainConfig,
    TrainResult,
    evaluate,
    history_csv,
    load_checkpoint,
    save_checkpoint,
    train_loop,
)

log = logging.getLogger(__name__)

ABLATION_HEADER = ("variant", "accuracy", "precision", "recall", "f1")
PREDICTION_HEADER = ("id", "label", "p_sarcastic")

# display names for the ablation table
VARIANT_LABELS = {
    "full": "full",
    "no_visual_attention": "w/o visual attention",
    "no_tau_si": "w/o τ_SI'",
    "no_tau_sc": "w/o τ_SC",
}


def build_vocab(dataset: Dataset) -> Vocab:
    """Vocabulary over training texts and captions, in first-seen order."""
    train = dataset.split("train")
    return Vocab.build([s.text for s in train] + [s.caption for s in train])


def encode_samples(samples: Sequence[Sample], vocab: Vocab, config: ModelConfig) -> list[Encoded]:
    return [prepare_sample(s, vocab, config) for s in samples]


@dataclass
class TrainedRun:
    result: TrainResult
    vocab: Vocab
    config: ModelConfig
    train_config: TrainConfig
    splits: dict[str, list[Encoded]]

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.result.params, self.result.state, self.config, self.train_config, self.vocab)

    def metrics(self, split: str) -> MetricsReport:
        return evaluate(self.splits[split], self.result.params, self.config).metrics


def train_on_manifest(
    manifest, model_config: ModelConfig, train_config: TrainConfig, vocab: Optional[Vocab] = None
) -> TrainedRun:
    dataset = parse_manifest(manifest)
    if vocab is None:
        vocab = build_vocab(dataset)
    splits = {name: encode_samples(dataset.split(name), vocab, model_config) for name in ("train", "dev", "test")}
    for name in ("train", "dev"):
        if any(e.label is None for e in splits[name]):
            raise DataError(f"{name} split contains unlabeled samples")
    splits["test"] = [e for e in splits["test"] if e.label is not None]
    result = train_loop(splits["train"], splits["dev"], model_config, train_config, vocab_size=len(vocab))
    return TrainedRun(result, vocab, model_config, train_config, splits)


def run_training(cfg: RunConfig) -> TrainedRun:
    """Train and write checkpoint, history CSV, vocabulary and effective config."""
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_run_config(cfg, out / "config.ini")
    run = train_on_manifest(cfg.run.manifest, cfg.model, cfg.train)
    save_checkpoint(out / "checkpoint.bin", run.checkpoint())
    (out / "history.csv").write_text(history_csv(run.result.history), encoding="utf-8", newline="")
    run.vocab.save(out / "vocab.txt")
    return run


def labelled(samples: Sequence[Sample]) -> list[Sample]:
    return [s for s in samples if s.label is not None]


def evaluate_checkpoint(checkpoint_path, manifest, split: str = "test") -> MetricsReport:
    ckpt = load_checkpoint(checkpoint_path)
    samples = labelled(parse_manifest(manifest).split(split))
    if not samples:
        raise DataError(f"split {split!r} has no labelled samples")
    encoded = encode_samples(samples, ckpt.vocab, ckpt.model_config)
    return evaluate(encoded, ckpt.params, ckpt.model_config).metrics


def predict_csv(checkpoint_path, manifest, split: str = "test") -> str:
    """Prediction CSV (id, label, p_sarcastic) for every sample of a split."""
    from .model import forward

    ckpt = load_checkpoint(checkpoint_path)
    samples = parse_manifest(manifest).split(split)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PREDICTION_HEADER)
    for enc in encode_samples(samples, ckpt.vocab, ckpt.model_config):
        pred = forward(enc, ckpt.params, ckpt.model_config, training=False)
        writer.writerow([enc.id, pred.label, f"{pred.p_sarcastic:.6f}"])
    return buf.getvalue()


@dataclass
class AblationRow:
    variant: str
    metrics: MetricsReport


def run_ablation(manifest, model_config: ModelConfig, train_config: TrainConfig) -> list[AblationRow]:
    """Train the full model and the three single-removal variants under one seed."""
    dataset = parse_manifest(manifest)
    vocab = build_vocab(dataset)
    rows = []
    for name in VARIANTS:
        cfg = model_config.variant(name)
        log.info("ablation: training %s", name)
        run = train_on_manifest(manifest, cfg, replace(train_config), vocab=vocab)
        rows.append(AblationRow(name, run.metrics("test")))
    return rows


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ABLATION_HEADER)
    for row in rows:
        m = row.metrics
        writer.writerow(
            [VARIANT_LABELS[row.variant]] + [f"{x:.4f}" for x in (m.accuracy, m.precision, m.recall, m.f1)]
        )
    return buf.getvalue()


def text_only_probe(manifest, epochs: int = 500, lr: float = 0.5, l2: float = 1e-3) -> float:
    """Test accuracy of a bag-of-words logistic regression trained on text alone."""
    dataset = parse_manifest(manifest)
    vocab = build_vocab(dataset)

    def features(samples):
        x = np.zeros((len(samples), len(vocab)))
        for i, s in enumerate(samples):
            for tok in split_words(s.text):
                x[i, vocab.id(tok)] += 1.0
        return x, np.array([s.label for s in samples], dtype=float)

    x, y = features(dataset.split("train"))
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(epochs):
        p = 1.0 / (1.0 + np.exp(-(x @ w + b)))
        w -= lr * (x.T @ (p - y) / len(y) + l2 * w)
        b -= lr * float(np.mean(p - y))
    xt, yt = features(labelled(dataset.split("test")))
    pred = (xt @ w + b > 0).astype(float)
    return float(np.mean(pred == yt))


__all__ = [
    "ABLATION_HEADER",
    "AblationRow",
    "PREDICTION_HEADER",
    "TrainedRun",
    "ablation_csv",
    "build_vocab",
    "encode_samples",
    "evaluate_checkpoint",
    "predict_csv",
    "run_ablation",
    "run_training",
    "text_only_probe",
    "train_on_manifest",
]
