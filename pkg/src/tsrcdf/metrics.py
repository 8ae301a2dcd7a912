"""Confusion matrices and macro/weighted precision, recall, F1."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import CodeOutOfRange, EmptyMatrix, LengthMismatch


class UndefinedMetricWarning(UserWarning):
    """A precision/recall denominator was zero; the value was set to 0."""


def _code(x) -> int:
    return int(getattr(x, "code", x))


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are gold classes, columns are predicted classes."""

    counts: np.ndarray
    class_names: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict:
        return {"counts": self.counts.tolist(), "class_names": list(self.class_names)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConfusionMatrix":
        return cls(counts=np.asarray(d["counts"], dtype=np.int64),
                   class_names=tuple(d["class_names"]))


@dataclass(frozen=True)
class MetricsReport:
    per_class: tuple[dict, ...]
    macro: dict
    weighted: dict
    accuracy: float

    def to_dict(self) -> dict:
        return {
            "per_class": [dict(pc) for pc in self.per_class],
            "macro": dict(self.macro),
            "weighted": dict(self.weighted),
            "accuracy": self.accuracy,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsReport":
        return cls(per_class=tuple(dict(pc) for pc in d["per_class"]),
                   macro=dict(d["macro"]), weighted=dict(d["weighted"]),
                   accuracy=float(d["accuracy"]))


def confusion(golds: Sequence, preds: Sequence, C: int,
              class_names: Sequence[str] | None = None) -> ConfusionMatrix:
    """Count (gold, predicted) pairs into a C x C matrix."""
    if len(golds) != len(preds):
        raise LengthMismatch(f"{len(golds)} golds vs {len(preds)} predictions")
    if len(golds) == 0:
        raise LengthMismatch("need at least one evaluated pair")
    counts = np.zeros((C, C), dtype=np.int64)
    for g, p in zip(golds, preds):
        gc, pc = _code(g), _code(p)
        if not (0 <= gc < C) or not (0 <= pc < C):
            raise CodeOutOfRange(f"label code out of range for C={C}: gold={gc} pred={pc}")
        counts[gc, pc] += 1
    if class_names is None:
        class_names = tuple(str(i) for i in range(C))
    return ConfusionMatrix(counts=counts, class_names=tuple(class_names))


def _safe_div(num: float, den: float, what: str, cls: str) -> float:
    if den == 0.0:
        warnings.warn(f"{what} undefined for class {cls} (0/0), using 0",
                      UndefinedMetricWarning, stacklevel=3)
        return 0.0
    return num / den


def report(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class and averaged precision/recall/F1 plus accuracy.

    Zero-denominator classes score 0 (with a warning) and still count
    toward the macro averages.
    """
    counts = cm.counts.astype(np.float64)
    total = counts.sum()
    if total < 1:
        raise EmptyMatrix("confusion matrix has no counts")
    C = counts.shape[0]
    diag = np.diag(counts)
    col_sums = counts.sum(axis=0)
    row_sums = counts.sum(axis=1)

    per_class: list[dict] = []
    for c in range(C):
        name = cm.class_names[c]
        p = _safe_div(float(diag[c]), float(col_sums[c]), "precision", name)
        r = _safe_div(float(diag[c]), float(row_sums[c]), "recall", name)
        f1 = 0.0 if p + r == 0.0 else 2.0 * p * r / (p + r)
        per_class.append({"class": name, "precision": p, "recall": r,
                          "f1": f1, "support": int(row_sums[c])})

    macro = {
        "precision": sum(pc["precision"] for pc in per_class) / C,
        "recall": sum(pc["recall"] for pc in per_class) / C,
        "f1": sum(pc["f1"] for pc in per_class) / C,
    }
    weighted = {
        key: sum(pc[key] * pc["support"] for pc in per_class) / total
        for key in ("precision", "recall", "f1")
    }
    accuracy = float(diag.sum() / total)
    return MetricsReport(per_class=tuple(per_class), macro=macro,
                         weighted=weighted, accuracy=accuracy)


def format_report(rep: MetricsReport) -> str:
    """Aligned plain-text table, percentages with one decimal."""

    def pct(x: float) -> str:
        return f"{100.0 * x:5.1f}"

    width = max([len("weighted avg")] + [len(str(pc["class"])) for pc in rep.per_class])
    lines = [f"{'':{width}}  {'P%':>6} {'R%':>6} {'F1%':>6} {'support':>8}"]
    for pc in rep.per_class:
        lines.append(f"{pc['class']:{width}}  {pct(pc['precision']):>6} "
                     f"{pct(pc['recall']):>6} {pct(pc['f1']):>6} {pc['support']:>8}")
    total = sum(pc["support"] for pc in rep.per_class)
    lines.append(f"{'macro avg':{width}}  {pct(rep.macro['precision']):>6} "
                 f"{pct(rep.macro['recall']):>6} {pct(rep.macro['f1']):>6} {total:>8}")
    lines.append(f"{'weighted avg':{width}}  {pct(rep.weighted['precision']):>6} "
                 f"{pct(rep.weighted['recall']):>6} {pct(rep.weighted['f1']):>6} {total:>8}")
    lines.append(f"accuracy: {pct(rep.accuracy).strip()}%")
    return "\n".join(lines)
