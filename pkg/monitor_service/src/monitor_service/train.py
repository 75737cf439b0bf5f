"""Detector fine-tuning.

Defaults mirror the reference recipe: 5 epochs, learning rate 5e-5,
batch size 8, max sequence length 2048, an 80/20 train/eval split done
upstream by the dataset exporter, inverse-frequency class weighting on
the cross-entropy loss, and model selection by best eval F1. Every value
is overridable; the tiny from-scratch encoder used at desk scale wants a
larger learning rate than a pretrained checkpoint would.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import torch
from torch import nn

from .data import RENDER_SPEC, Vocab, load_samples
from .model import EncoderConfig, WindowClassifier, pad_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectorMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: tuple[int, int, int, int]  # (tp, fp, tn, fn)

    def to_dict(self) -> dict[str, Any]:
        tp, fp, tn, fn = self.confusion
        return {
            "accuracy": self.accuracy, "precision": self.precision,
            "recall": self.recall, "f1": self.f1,
            "confusion": {"tp": tp, "fp": fp, "tn": tn, "fn": fn},
        }


def metrics_from_predictions(predicted: list[int], labels: list[int]) -> DetectorMetrics:
    tp = sum(1 for p, l in zip(predicted, labels) if p and l)
    fp = sum(1 for p, l in zip(predicted, labels) if p and not l)
    tn = sum(1 for p, l in zip(predicted, labels) if not p and not l)
    fn = sum(1 for p, l in zip(predicted, labels) if not p and l)
    n = len(labels)
    accuracy = (tp + tn) / n if n else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return DetectorMetrics(accuracy, precision, recall, f1, (tp, fp, tn, fn))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 5e-5
    batch_size: int = 8
    max_sequence_length: int = 2048
    split: float = 0.8  # documented upstream split; the exporter enforces it
    class_weighting: str = "inverse-frequency"
    selection_metric: str = "f1"
    encoder: dict[str, Any] = field(default_factory=dict)  # EncoderConfig overrides
    seed: int = 0
    threshold: float = 0.5
    early_stop_f1: float = 1.01  # stop once eval F1 reaches this (disabled by default)

    def to_dict(self) -> dict[str, Any]:
        return {
            "epochs": self.epochs, "learning_rate": self.learning_rate,
            "batch_size": self.batch_size, "max_sequence_length": self.max_sequence_length,
            "split": self.split, "class_weighting": self.class_weighting,
            "selection_metric": self.selection_metric, "encoder": dict(self.encoder),
            "seed": self.seed, "threshold": self.threshold,
            "early_stop_f1": self.early_stop_f1,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


class TrainError(RuntimeError):
    pass


def _class_weights(labels: list[int]) -> torch.Tensor:
    positives = sum(labels)
    negatives = len(labels) - positives
    if positives == 0 or negatives == 0:
        raise TrainError("a class is absent from the train split; cannot fit a detector")
    total = len(labels)
    return torch.tensor([total / (2 * negatives), total / (2 * positives)], dtype=torch.float32)


def _evaluate(model: WindowClassifier, encoded: list[list[int]], labels: list[int],
              batch_size: int, threshold: float, device: torch.device) -> DetectorMetrics:
    predicted: list[int] = []
    for i in range(0, len(encoded), batch_size):
        ids, mask = pad_batch(encoded[i:i + batch_size], device)
        scores = model.score(ids, mask)
        predicted.extend(int(s >= threshold) for s in scores.tolist())
    return metrics_from_predictions(predicted, labels)


def train_detector(
    kind: str,
    train_file: Path | str,
    eval_file: Path | str,
    out_dir: Path | str,
    cfg: Optional[TrainConfig] = None,
) -> tuple[Path, DetectorMetrics]:
    """Fit one detector; returns (artifact directory, eval metrics).

    The artifact holds the weights, vocabulary, rendering spec, config
    digest, and eval metrics of the best-F1 epoch.
    """
    if kind not in ("stuck", "milestone"):
        raise ValueError(f"unknown detector kind {kind!r}")
    cfg = cfg or TrainConfig()
    torch.manual_seed(cfg.seed)
    random.seed(cfg.seed)
    device = torch.device("cpu")

    train_samples = load_samples(train_file, expect_kind=kind)
    eval_samples = load_samples(eval_file, expect_kind=kind)
    if not train_samples or not eval_samples:
        raise TrainError("empty train or eval split")

    vocab = Vocab.build(s.text for s in train_samples)
    encoder_cfg = EncoderConfig(vocab_size=len(vocab), **cfg.encoder)
    model = WindowClassifier(encoder_cfg).to(device)

    train_enc = [vocab.encode(s.text, cfg.max_sequence_length) for s in train_samples]
    train_labels = [s.label for s in train_samples]
    eval_enc = [vocab.encode(s.text, cfg.max_sequence_length) for s in eval_samples]
    eval_labels = [s.label for s in eval_samples]

    weights = _class_weights(train_labels).to(device)
    loss_fn = nn.CrossEntropyLoss(weight=weights)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate)

    order = list(range(len(train_enc)))
    shuffler = random.Random(cfg.seed)
    best_f1 = -1.0
    best_state = None
    best_metrics = None
    for epoch in range(cfg.epochs):
        model.train()
        shuffler.shuffle(order)
        total_loss = 0.0
        for i in range(0, len(order), cfg.batch_size):
            batch = order[i:i + cfg.batch_size]
            ids, mask = pad_batch([train_enc[j] for j in batch], device)
            labels = torch.tensor([train_labels[j] for j in batch], dtype=torch.long, device=device)
            optimizer.zero_grad()
            loss = loss_fn(model(ids, mask), labels)
            loss.backward()
            optimizer.step()
            total_loss += float(loss.detach())
        metrics = _evaluate(model, eval_enc, eval_labels, cfg.batch_size, cfg.threshold, device)
        log.info("%s epoch %d: loss %.4f eval F1 %.4f", kind, epoch + 1, total_loss, metrics.f1)
        if metrics.f1 > best_f1:
            best_f1 = metrics.f1
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            best_metrics = metrics
        if best_f1 >= cfg.early_stop_f1:
            break

    assert best_state is not None and best_metrics is not None
    model.load_state_dict(best_state)

    out = Path(out_dir) / kind
    out.mkdir(parents=True, exist_ok=True)
    torch.save(best_state, out / "model.pt")
    out.joinpath("vocab.json").write_text(json.dumps(vocab.to_dict()), encoding="utf-8")
    out.joinpath("config.json").write_text(json.dumps({
        "kind": kind,
        "encoder": encoder_cfg.to_dict(),
        "train": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "rendering": RENDER_SPEC,
        "train_samples": len(train_samples),
        "eval_samples": len(eval_samples),
    }, indent=2, sort_keys=True), encoding="utf-8")
    out.joinpath("metrics.json").write_text(
        json.dumps(best_metrics.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )
    return out, best_metrics


@dataclass
class Detector:
    """A loaded artifact, ready to score rendered windows."""

    kind: str
    model: WindowClassifier
    vocab: Vocab
    max_sequence_length: int
    config_digest: str
    threshold: float = 0.5

    @classmethod
    def load(cls, artifact_dir: Path | str) -> "Detector":
        path = Path(artifact_dir)
        config = json.loads(path.joinpath("config.json").read_text(encoding="utf-8"))
        vocab = Vocab.from_dict(json.loads(path.joinpath("vocab.json").read_text(encoding="utf-8")))
        model = WindowClassifier(EncoderConfig.from_dict(config["encoder"]))
        model.load_state_dict(torch.load(path / "model.pt", map_location="cpu", weights_only=True))
        model.eval()
        return cls(
            kind=config["kind"],
            model=model,
            vocab=vocab,
            max_sequence_length=int(config["train"]["max_sequence_length"]),
            config_digest=config["config_digest"],
            threshold=float(config["train"].get("threshold", 0.5)),
        )

    def score_text(self, text: str) -> float:
        ids, mask = pad_batch([self.vocab.encode(text, self.max_sequence_length)], torch.device("cpu"))
        return float(self.model.score(ids, mask)[0])
