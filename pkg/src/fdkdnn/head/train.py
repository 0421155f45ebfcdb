"""Mini-batch SGD on cached embeddings for a fresh softmax head."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data.dataset import DatasetManifest, Split
from ..errors import FingerprintMismatch, NonFiniteError, NonFiniteLoss
from ..rng import Xorshift64Star
from ..tensor import Mode, dropout, softmax
from .cache import EmbeddingCache
from .softmax import PROB_FLOOR, SoftmaxHead, head_gradient, init_head

_BATCH_STREAM = 0xBA7C
_DROPOUT_STREAM = 0xD209


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    steps: int = 4000
    batch_size: int = 100
    momentum: float = 0.0
    seed: int = 42
    eval_every: int = 100
    dropout: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.eval_every < 1:
            raise ValueError("eval_every must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


def sgd_step(head: SoftmaxHead, grads, config: TrainConfig, velocity=None):
    """``v <- momentum * v - lr * g``; ``theta <- theta + v``. Returns ``(head, velocity)``.

    The velocity is kept in float64; parameters are rounded back to float32.
    """
    dW, db = grads[0], grads[1]
    if velocity is None:
        velocity = (np.zeros(head.W.shape), np.zeros(head.b.shape))
    vW = config.momentum * velocity[0] - config.learning_rate * np.asarray(dW, np.float64)
    vb = config.momentum * velocity[1] - config.learning_rate * np.asarray(db, np.float64)
    with np.errstate(over="ignore"):
        W = (head.W.astype(np.float64) + vW).astype(np.float32)
        b = (head.b.astype(np.float64) + vb).astype(np.float32)
    return SoftmaxHead(W, b, head.class_names), (vW, vb)


@dataclass(frozen=True)
class TrainRecord:
    step: int
    train_loss: float
    train_accuracy: float
    validation_accuracy: float | None


@dataclass
class TrainHistory:
    records: list[TrainRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_validation_accuracy(self) -> float | None:
        return self.records[-1].validation_accuracy if self.records else None

    @property
    def best(self) -> TrainRecord | None:
        """Record with the highest validation accuracy (earliest on ties)."""
        scored = [r for r in self.records if r.validation_accuracy is not None]
        return max(scored, key=lambda r: (r.validation_accuracy, -r.step)) if scored else None

    @property
    def best_validation_accuracy(self) -> float | None:
        best = self.best
        return best.validation_accuracy if best else None

    def dumps(self) -> str:
        header = {
            "format": "fdk-history/1",
            "final_validation_accuracy": self.final_validation_accuracy,
            "best_validation_accuracy": self.best_validation_accuracy,
            "best_step": self.best.step if self.best else None,
        }
        lines = [json.dumps(header)] + [json.dumps(asdict(r)) for r in self.records]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> TrainHistory:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        return cls([TrainRecord(**json.loads(ln)) for ln in lines[1:]])


def score(head: SoftmaxHead, E: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Mean cross-entropy and accuracy of ``head`` on embeddings ``E`` with labels ``y``."""
    probs = softmax(E.astype(np.float64) @ head.W.astype(np.float64).T + head.b.astype(np.float64))
    loss = float(-np.log(np.maximum(probs[np.arange(len(y)), y], PROB_FLOOR)).mean())
    return loss, float((probs.argmax(axis=1) == y).mean())


def train(
    cache: EmbeddingCache,
    manifest: DatasetManifest,
    config: TrainConfig = TrainConfig(),
    *,
    fingerprint: bytes | None = None,
) -> tuple[SoftmaxHead, TrainHistory]:
    """Train a zero-initialised head on the TRAIN records of ``manifest``.

    Each epoch visits the training set in a fresh seeded order; when fewer
    than ``batch_size`` records remain, the order is redrawn and the
    leftovers are skipped. Every ``eval_every`` steps, and after the final
    step, the full-train loss/accuracy and validation accuracy are logged.
    """
    if fingerprint is not None and fingerprint != cache.fingerprint:
        raise FingerprintMismatch("embedding cache does not belong to this backbone")
    train_recs = manifest.in_split(Split.TRAIN)
    val_recs = manifest.in_split(Split.VALIDATION)
    if not train_recs:
        raise ValueError("manifest has no TRAIN records; run split first")
    if config.batch_size > len(train_recs):
        raise ValueError(f"batch_size {config.batch_size} exceeds {len(train_recs)} training records")
    E = cache.matrix(train_recs)
    y = np.array([manifest.label_index(r.class_label) for r in train_recs])
    E_val = cache.matrix(val_recs)
    y_val = np.array([manifest.label_index(r.class_label) for r in val_recs], dtype=np.int64)

    head = init_head(len(manifest.classes), cache.dim, manifest.classes)
    velocity = None
    history = TrainHistory()
    batches = Xorshift64Star(config.seed, _BATCH_STREAM)
    noise = Xorshift64Star(config.seed, _DROPOUT_STREAM)
    n, bs = len(train_recs), config.batch_size
    order: list[int] = []
    pos = n
    for step in range(1, config.steps + 1):
        if pos + bs > n:
            order = batches.permutation(n)
            pos = 0
        idx = order[pos : pos + bs]
        pos += bs
        Eb = E[idx]
        if config.dropout > 0:
            Eb = dropout(Eb, config.dropout, Mode.TRAIN, noise)
        dW, db, loss = head_gradient(head, Eb, y[idx])
        if not math.isfinite(loss):
            raise NonFiniteLoss(step, loss)
        try:
            head, velocity = sgd_step(head, (dW, db), config, velocity)
        except NonFiniteError:
            raise NonFiniteLoss(step, float("nan")) from None
        if step % config.eval_every == 0 or step == config.steps:
            train_loss, train_acc = score(head, E, y)
            val_acc = score(head, E_val, y_val)[1] if len(val_recs) else None
            history.records.append(TrainRecord(step, train_loss, train_acc, val_acc))
    return head, history
