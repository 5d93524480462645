"""Confusion matrices and accuracy/precision/recall/specificity/F1.

A metric whose denominator is zero is reported as ``None`` (undefined)
rather than 0 or 1. Multi-class reports average one-vs-rest values with
equal class weight ("macro"), skipping undefined entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ArgumentError

UNDEFINED = None
METRIC_NAMES = ("accuracy", "precision", "recall", "specificity", "f1")


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are actual classes, columns predicted classes."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 2:
            raise ArgumentError(f"confusion matrix must be CxC with C >= 2, got shape {c.shape}")
        if c.size and not np.issubdtype(c.dtype, np.integer):
            if not np.all(c == np.round(c)):
                raise ArgumentError("confusion counts must be integers")
        c = c.astype(np.int64)
        if np.any(c < 0):
            raise ArgumentError("confusion counts must be nonnegative")
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)

    def one_vs_rest(self, c: int) -> tuple[int, int, int, int]:
        """(TP, FN, FP, TN) with class ``c`` as the positive class."""
        m = self.counts
        tp = int(m[c, c])
        fn = int(m[c, :].sum()) - tp
        fp = int(m[:, c].sum()) - tp
        tn = self.total - tp - fn - fp
        return tp, fn, fp, tn


def confusion_from_predictions(actual: Sequence[int], predicted: Sequence[int], n_classes: int) -> ConfusionMatrix:
    a = np.asarray(actual, dtype=np.int64)
    p = np.asarray(predicted, dtype=np.int64)
    if a.shape != p.shape or a.ndim != 1:
        raise ArgumentError(f"actual {a.shape} and predicted {p.shape} must be equal-length vectors")
    if n_classes < 2:
        raise ArgumentError(f"need at least 2 classes, got {n_classes}")
    for name, v in (("actual", a), ("predicted", p)):
        if v.size and (v.min() < 0 or v.max() >= n_classes):
            raise ArgumentError(f"{name} labels must lie in [0, {n_classes})")
    flat = np.bincount(a * n_classes + p, minlength=n_classes * n_classes)
    return ConfusionMatrix(flat.reshape(n_classes, n_classes))


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else UNDEFINED


def _f1(precision: Optional[float], recall: Optional[float]) -> Optional[float]:
    if precision is None or recall is None or precision + recall == 0:
        return UNDEFINED
    return 2 * (recall * precision) / (recall + precision)


@dataclass(frozen=True)
class ClassMetrics:
    label: int
    tp: int
    fn: int
    fp: int
    tn: int
    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    specificity: Optional[float]
    f1: Optional[float]


def _counts_metrics(label: int, tp: int, fn: int, fp: int, tn: int) -> ClassMetrics:
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return ClassMetrics(
        label=label,
        tp=tp,
        fn=fn,
        fp=fp,
        tn=tn,
        accuracy=_ratio(tp + tn, tp + tn + fp + fn),
        precision=precision,
        recall=recall,
        specificity=_ratio(tn, tn + fp),
        f1=_f1(precision, recall),
    )


@dataclass(frozen=True)
class MetricReport:
    """Headline metrics plus per-class breakdown.

    ``averaging`` is ``"binary"`` or ``"macro"``. ``excluded`` counts, per
    metric, the classes left out of a macro mean because they were undefined.
    """

    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    specificity: Optional[float]
    f1: Optional[float]
    averaging: str
    per_class: tuple[ClassMetrics, ...] = ()
    excluded: dict = field(default_factory=dict)

    @property
    def sensitivity(self) -> Optional[float]:
        return self.recall

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def binary_metrics(cm: ConfusionMatrix, positive: int = 1) -> MetricReport:
    if cm.n_classes != 2:
        raise ArgumentError(f"binary metrics need a 2x2 matrix, got {cm.n_classes}x{cm.n_classes}")
    if positive not in (0, 1):
        raise ArgumentError(f"positive class must be 0 or 1, got {positive}")
    if cm.total == 0:
        raise ArgumentError("confusion matrix is empty")
    m = _counts_metrics(positive, *cm.one_vs_rest(positive))
    return MetricReport(
        accuracy=m.accuracy,
        precision=m.precision,
        recall=m.recall,
        specificity=m.specificity,
        f1=m.f1,
        averaging="binary",
        per_class=(m,),
    )


def multiclass_metrics(cm: ConfusionMatrix) -> MetricReport:
    """Accuracy is trace/total; the other four are macro means over one-vs-rest classes.

    Macro F1 is the mean of per-class F1 values, so it need not equal the
    harmonic mean of macro precision and macro recall.
    """
    if cm.n_classes < 2:
        raise ArgumentError("need at least 2 classes")
    if cm.total == 0:
        raise ArgumentError("confusion matrix is empty")
    per_class = tuple(_counts_metrics(c, *cm.one_vs_rest(c)) for c in range(cm.n_classes))
    macro, excluded = {}, {}
    for name in METRIC_NAMES[1:]:
        vals = [getattr(m, name) for m in per_class if getattr(m, name) is not None]
        excluded[name] = len(per_class) - len(vals)
        macro[name] = sum(vals) / len(vals) if vals else UNDEFINED
    return MetricReport(
        accuracy=int(np.trace(cm.counts)) / cm.total,
        averaging="macro",
        per_class=per_class,
        excluded=excluded,
        **macro,
    )
