"""Softmax classification head: an affine map to K logits followed by softmax."""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, NonFiniteInput
from ..tensor import fully_connected, softmax

PROB_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class SoftmaxHead:
    W: np.ndarray  # (K, D) float32
    b: np.ndarray  # (K,) float32
    class_names: tuple[str, ...]

    def __post_init__(self):
        W = np.ascontiguousarray(self.W, dtype=np.float32)
        b = np.ascontiguousarray(self.b, dtype=np.float32).reshape(-1)
        names = tuple(self.class_names)
        if W.ndim != 2 or b.shape[0] != W.shape[0] or len(names) != W.shape[0]:
            raise DimensionMismatch(
                f"head shapes disagree: W {W.shape}, b {b.shape}, {len(names)} class names"
            )
        if not (np.isfinite(W).all() and np.isfinite(b).all()):
            raise NonFiniteInput("head parameters must be finite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "class_names", names)

    @property
    def K(self) -> int:
        return self.W.shape[0]

    @property
    def D(self) -> int:
        return self.W.shape[1]

    def same_params(self, other: SoftmaxHead) -> bool:
        return (
            self.class_names == other.class_names
            and self.W.tobytes() == other.W.tobytes()
            and self.b.tobytes() == other.b.tobytes()
        )


def init_head(K: int, D: int, class_names: Sequence[str]) -> SoftmaxHead:
    """Zero-initialised head; every embedding maps to the uniform distribution."""
    if K < 2:
        raise ValueError(f"a classification head needs at least 2 classes, got {K}")
    if D < 1:
        raise ValueError(f"embedding dim must be positive, got {D}")
    return SoftmaxHead(np.zeros((K, D), np.float32), np.zeros(K, np.float32), tuple(class_names))


def head_forward(head: SoftmaxHead, e: np.ndarray) -> np.ndarray:
    """Class probabilities for one embedding (D,) or a batch (n, D)."""
    return softmax(fully_connected(np.asarray(e), head.W, head.b))


def cross_entropy(probs: np.ndarray, label: int) -> float:
    probs = np.asarray(probs)
    if not 0 <= label < probs.shape[-1]:
        raise IndexError(f"label {label} out of range for {probs.shape[-1]} classes")
    return -float(np.log(max(float(probs[label]), PROB_FLOOR)))


def head_gradient(head: SoftmaxHead, embeddings: np.ndarray, labels: Sequence[int]):
    """Mean cross-entropy over a batch and its gradient with respect to (W, b).

    Everything is evaluated in float64. Returns ``(dW, db, loss)``.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if E.ndim != 2 or E.shape[0] == 0:
        raise ValueError("head_gradient needs a non-empty (n, D) batch")
    if E.shape[1] != head.D or y.shape != (E.shape[0],):
        raise DimensionMismatch(f"batch {E.shape} / labels {y.shape} do not fit head D={head.D}")
    if y.min() < 0 or y.max() >= head.K:
        raise IndexError("label out of range")
    n = E.shape[0]
    probs = softmax(E @ head.W.astype(np.float64).T + head.b.astype(np.float64))
    rows = np.arange(n)
    loss = float(-np.log(np.maximum(probs[rows, y], PROB_FLOOR)).mean())
    dlogits = probs
    dlogits[rows, y] -= 1.0
    dW = dlogits.T @ E / n
    db = dlogits.sum(axis=0) / n
    return dW, db, loss
