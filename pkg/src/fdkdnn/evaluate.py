"""Scoring a trained classifier: confusion matrix, accuracies, misclassification report."""
from __future__ import annotations

import enum
import json
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data.dataset import DatasetManifest, Split
from .data.images import load_input
from .errors import EmptySplit
from .graph.executor import Graph, forward
from .head.cache import EmbeddingCache
from .head.softmax import SoftmaxHead, head_forward

SCHEMA = "fdk-eval-report/1"


class ReportFormat(str, enum.Enum):
    TEXT = "TEXT"
    STRUCTURED = "STRUCTURED"


def predict(model, x) -> tuple[int, np.ndarray]:
    """Return ``(class index, probabilities)``; ties go to the lowest index.

    ``model`` is either a ``SoftmaxHead`` applied to an embedding, or a full
    ``Graph`` applied to an image tensor (or an image path).
    """
    if isinstance(model, SoftmaxHead):
        probs = head_forward(model, np.asarray(x).reshape(-1))
    elif isinstance(model, Graph):
        if isinstance(x, (str, Path)):
            x = load_input(x, model.manifest)
        probs = forward(model, x, until=model.manifest.output_id)[model.manifest.output_id][0].reshape(-1)
    else:
        probs = np.asarray(model(x)).reshape(-1)
    return int(np.argmax(probs)), probs


@dataclass(frozen=True)
class Misclassification:
    path: str
    true_label: str
    predicted_label: str
    confidence: float


@dataclass(frozen=True)
class EvalReport:
    split: str
    class_names: tuple[str, ...]
    confusion: tuple[tuple[int, ...], ...]  # rows = true class, columns = predicted
    misclassifications: tuple[Misclassification, ...]

    @property
    def total(self) -> int:
        return sum(map(sum, self.confusion))

    @property
    def correct(self) -> int:
        return sum(self.confusion[k][k] for k in range(len(self.class_names)))

    @property
    def micro_accuracy(self) -> float:
        return self.correct / self.total

    overall_accuracy = micro_accuracy

    @property
    def per_class_accuracy(self) -> dict[str, float]:
        """Accuracy per true class; classes with no records are absent."""
        out = {}
        for k, name in enumerate(self.class_names):
            support = sum(self.confusion[k])
            if support:
                out[name] = self.confusion[k][k] / support
        return out

    @property
    def macro_accuracy(self) -> float:
        accs = list(self.per_class_accuracy.values())
        return sum(accs) / len(accs)

    @property
    def misclassification_rate(self) -> float:
        return (self.total - self.correct) / self.total

    @property
    def misclassified_as(self) -> dict[str, int]:
        """Wrong predictions per predicted class (only classes that received any)."""
        out = {}
        for j, name in enumerate(self.class_names):
            count = sum(self.confusion[i][j] for i in range(len(self.class_names)) if i != j)
            if count:
                out[name] = count
        return out

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA,
            "split": self.split,
            "class_names": list(self.class_names),
            "total": self.total,
            "correct": self.correct,
            "micro_accuracy": self.micro_accuracy,
            "macro_accuracy": self.macro_accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "misclassification_rate": self.misclassification_rate,
            "misclassified_as": {
                name: {"count": n, "share_of_total": n / self.total}
                for name, n in self.misclassified_as.items()
            },
            "confusion": [list(row) for row in self.confusion],
            "misclassifications": [
                {"path": m.path, "true_label": m.true_label,
                 "predicted_label": m.predicted_label, "confidence": m.confidence}
                for m in self.misclassifications
            ],
        }


def tally(
    class_names: Sequence[str],
    items: Iterable[tuple[str, int, np.ndarray]],
    split: str = Split.VALIDATION.value,
) -> EvalReport:
    """Build a report from ``(path, true index, probabilities)`` triples."""
    K = len(class_names)
    counts = np.zeros((K, K), dtype=np.int64)
    wrong = []
    for path, true_idx, probs in items:
        pred = int(np.argmax(probs))
        counts[true_idx, pred] += 1
        if pred != true_idx:
            wrong.append(Misclassification(str(path), class_names[true_idx], class_names[pred], float(probs[pred])))
    if counts.sum() == 0:
        raise EmptySplit(f"no records to evaluate in split {split}")
    wrong.sort(key=lambda m: (m.path, m.true_label, m.predicted_label))
    return EvalReport(
        split=split,
        class_names=tuple(class_names),
        confusion=tuple(tuple(int(v) for v in row) for row in counts),
        misclassifications=tuple(wrong),
    )


def evaluate(
    classifier: SoftmaxHead | Callable[[np.ndarray], np.ndarray],
    cache: EmbeddingCache,
    manifest: DatasetManifest,
    split: Split = Split.VALIDATION,
    class_names: Sequence[str] | None = None,
) -> EvalReport:
    """Score ``classifier`` on the cached embeddings of one split of ``manifest``.

    Labels are matched to the classifier's class names by name, so an
    external manifest may cover only some of the classes.
    """
    split = Split(split)
    if class_names is None:
        class_names = classifier.class_names
    records = manifest.in_split(split)
    if not records:
        raise EmptySplit(f"manifest has no {split.value} records")
    index = {name: k for k, name in enumerate(class_names)}
    for r in records:
        if r.class_label not in index:
            raise ValueError(f"label {r.class_label!r} of {r.path} is not a classifier class")
    E = cache.matrix(records)
    items = ((r.path, index[r.class_label], predict(classifier, e)[1]) for r, e in zip(records, E))
    return tally(class_names, items, split.value)


def _pct(x: float) -> str:
    return f"{100 * x:.1f}%"


def _text(r: EvalReport) -> str:
    names = r.class_names
    lines = [
        f"Evaluation report ({SCHEMA}), split {r.split}",
        f"records: {r.total}  correct: {r.correct}  misclassified: {r.total - r.correct}"
        f" ({_pct(r.misclassification_rate)})",
        f"micro accuracy: {_pct(r.micro_accuracy)}",
        f"macro accuracy: {_pct(r.macro_accuracy)}",
        "",
        "Confusion matrix (rows: true class, columns: predicted class)",
    ]
    first = max(len("true \\ predicted"), *(len(n) for n in names))
    widths = [max(len(n), len(str(max(col)))) for n, col in zip(names, zip(*r.confusion))]
    lines.append("  ".join(["true \\ predicted".ljust(first)] + [n.rjust(w) for n, w in zip(names, widths)]))
    for name, row in zip(names, r.confusion):
        lines.append("  ".join([name.ljust(first)] + [str(v).rjust(w) for v, w in zip(row, widths)]))
    lines += ["", "Per-class accuracy"]
    per_class = r.per_class_accuracy
    for k, name in enumerate(names):
        support = sum(r.confusion[k])
        acc = _pct(per_class[name]) if name in per_class else "absent"
        lines.append(f"  {name.ljust(first)}  {acc:>7}  (n={support})")
    if r.misclassifications:
        lines += ["", "Misclassified as (share of all records)"]
        for name, n in r.misclassified_as.items():
            lines.append(f"  {name.ljust(first)}  {n:>4}  {_pct(n / r.total):>6}")
        lines += ["", "Misclassified records"]
        for m in r.misclassifications:
            lines.append(f"  {m.path}: {m.true_label} -> {m.predicted_label} ({_pct(m.confidence)})")
    return "\n".join(lines) + "\n"


def render_report(r: EvalReport, fmt: ReportFormat = ReportFormat.TEXT) -> str:
    if ReportFormat(fmt) is ReportFormat.TEXT:
        return _text(r)
    return json.dumps(r.to_json(), indent=2) + "\n"


def parse_report(text: str) -> EvalReport:
    doc = json.loads(text)
    if doc.get("schema") != SCHEMA:
        raise ValueError(f"unsupported report schema {doc.get('schema')!r}")
    report = EvalReport(
        split=doc["split"],
        class_names=tuple(doc["class_names"]),
        confusion=tuple(tuple(int(v) for v in row) for row in doc["confusion"]),
        misclassifications=tuple(Misclassification(**m) for m in doc["misclassifications"]),
    )
    if report.to_json() != doc:
        raise ValueError("report summary fields disagree with its confusion matrix")
    return report
