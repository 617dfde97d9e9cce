"""Confusion matrices, per-class precision/recall/F1 and accuracy reports."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Published per-class results (precision, recall, f1) and accuracy for the
# same eight classes, before and after GAN augmentation. Kept for side-by-side
# display only. The ipsweep and nmap F1 cells of the baseline are not the
# harmonic mean of their precision and recall; they are kept as published.
REFERENCE_BASELINE = {
    "accuracy": 0.995362,
    "classes": {
        "DDoS": (1.0000, 0.9917, 0.9959),
        "ipsweep": (0.9103, 0.9707, 0.9997),
        "neptune": (1.0000, 0.9997, 0.9999),
        "nmap": (0.9034, 0.7480, 0.9998),
        "normal": (0.9983, 0.9998, 0.9991),
        "portsweep": (1.0000, 0.9943, 0.9971),
        "satan": (0.9985, 0.9835, 0.9909),
        "smurf": (1.0000, 1.0000, 1.0000),
    },
}
REFERENCE_AUGMENTED = {
    "accuracy": 0.997886,
    "classes": {
        "DDoS": (0.9996, 0.9991, 0.9994),
        "ipsweep": (0.9835, 0.9960, 0.9897),
        "neptune": (1.0000, 1.0000, 1.0000),
        "nmap": (0.9978, 0.9906, 0.9942),
        "normal": (0.9987, 0.9992, 0.9990),
        "portsweep": (0.9999, 0.9998, 0.9998),
        "satan": (0.9991, 0.9983, 0.9987),
        "smurf": (0.9998, 1.0000, 0.9999),
    },
}

TABLE_HEADER = ("Class", "Precision", "Recall", "F1-Score", "Accuracy")


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted class
    class_names: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *self.class_names])
        for name, row in zip(self.class_names, self.counts):
            w.writerow([name, *(int(v) for v in row)])
        return buf.getvalue()


def confusion(pred, truth, n_classes: int, class_names: Sequence[str] | None = None) -> ConfusionMatrix:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError(f"pred and truth differ in length ({len(pred)} vs {len(truth)})")
    for arr in (pred, truth):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"class id out of range [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    names = tuple(class_names) if class_names is not None else tuple(str(i) for i in range(n_classes))
    return ConfusionMatrix(counts, names)


@dataclass(frozen=True)
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int
    undefined: tuple[str, ...] = ()


@dataclass(frozen=True)
class ClassMetrics:
    classes: dict[str, ClassScore]
    accuracy: float
    total: int

    def to_dict(self, digits: int | None = None) -> dict:
        # accuracy keeps at least 6 decimals, as in the published tables
        r = (lambda v: round(v, digits)) if digits is not None else (lambda v: v)
        return {
            "accuracy": round(self.accuracy, max(digits, 6)) if digits is not None else self.accuracy,
            "total": self.total,
            "classes": {
                name: {
                    "precision": r(s.precision),
                    "recall": r(s.recall),
                    "f1": r(s.f1),
                    "support": s.support,
                    "undefined": list(s.undefined),
                }
                for name, s in self.classes.items()
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ClassMetrics":
        classes = {
            name: ClassScore(v["precision"], v["recall"], v["f1"], v["support"], tuple(v.get("undefined", ())))
            for name, v in doc["classes"].items()
        }
        return cls(classes, doc["accuracy"], doc["total"])


def metrics(cm: ConfusionMatrix) -> ClassMetrics:
    """Per-class precision/recall/F1 and overall accuracy.

    A zero denominator yields 0 and the metric is listed in ``undefined``.
    """
    counts = np.asarray(cm.counts)
    total = int(counts.sum())
    if counts.size == 0 or total == 0:
        raise ValueError("confusion matrix is empty")
    diag = np.diag(counts)
    col = counts.sum(axis=0)
    row = counts.sum(axis=1)
    out = {}
    for c, name in enumerate(cm.class_names):
        undefined = []
        if col[c]:
            precision = diag[c] / col[c]
        else:
            precision = 0.0
            undefined.append("precision")
        if row[c]:
            recall = diag[c] / row[c]
        else:
            recall = 0.0
            undefined.append("recall")
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
            undefined.append("f1")
        out[name] = ClassScore(float(precision), float(recall), float(f1), int(row[c]), tuple(undefined))
    return ClassMetrics(out, float(diag.sum() / total), total)


def accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.size == 0:
        raise ValueError("no predictions")
    return float(np.mean(pred == truth))


@dataclass(frozen=True)
class ComparisonReport:
    before: ClassMetrics
    after: ClassMetrics
    deltas: dict[str, dict[str, float]]
    accuracy_delta: float
    improved: tuple[str, ...] = field(default=())

    def to_dict(self, digits: int = 4) -> dict:
        return {
            "before": self.before.to_dict(digits),
            "after": self.after.to_dict(digits),
            "deltas": {k: {m: round(v, digits) for m, v in d.items()} for k, d in self.deltas.items()},
            "accuracy_delta": round(self.accuracy_delta, 6),
            "recall_improved": list(self.improved),
        }


def compare(before: ClassMetrics, after: ClassMetrics, threshold: float = 0.01) -> ComparisonReport:
    if set(before.classes) != set(after.classes):
        raise ValueError("before and after cover different classes")
    deltas = {}
    improved = []
    for name in before.classes:
        b, a = before.classes[name], after.classes[name]
        deltas[name] = {
            "precision": a.precision - b.precision,
            "recall": a.recall - b.recall,
            "f1": a.f1 - b.f1,
        }
        if deltas[name]["recall"] > threshold:
            improved.append(name)
    return ComparisonReport(before, after, deltas, after.accuracy - before.accuracy, tuple(improved))


def format_table(m: ClassMetrics, title: str = "") -> str:
    """Aligned text table: one row per class, accuracy on the first row."""
    rows = []
    for i, (name, s) in enumerate(m.classes.items()):
        acc = f"{m.accuracy:.6f}" if i == 0 else ""
        rows.append((name, f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.f1:.4f}", acc))
    widths = [max(len(TABLE_HEADER[j]), *(len(r[j]) for r in rows)) for j in range(5)]
    lines = [title] if title else []
    lines.append("  ".join(h.ljust(w) for h, w in zip(TABLE_HEADER, widths)).rstrip())
    for r in rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def reference_metrics(ref: dict) -> ClassMetrics:
    classes = {name: ClassScore(p, r, f, 0) for name, (p, r, f) in ref["classes"].items()}
    return ClassMetrics(classes, ref["accuracy"], 0)


def format_comparison(report: ComparisonReport, with_reference: bool = True) -> str:
    parts = [
        format_table(report.before, "Before augmentation"),
        format_table(report.after, "After augmentation"),
    ]
    lines = ["Recall change per class"]
    for name, d in report.deltas.items():
        flag = "  improved" if name in report.improved else ""
        lines.append(f"  {name:<12} {d['recall']:+.4f}{flag}")
    lines.append(f"  accuracy     {report.accuracy_delta:+.6f}")
    parts.append("\n".join(lines) + "\n")
    if with_reference:
        parts.append(format_table(reference_metrics(REFERENCE_BASELINE), "Published, before augmentation"))
        parts.append(format_table(reference_metrics(REFERENCE_AUGMENTED), "Published, after augmentation"))
    return "\n".join(parts)
