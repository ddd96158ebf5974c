"""Binary classification metrics with NonHC (disease) as the positive class."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import POSITIVE_LABEL
from .errors import DegenerateClass, EmptyMatrix, ShapeError


class _Undefined:
    """Marker for a ratio whose denominator is zero."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "Undefined"

    def __str__(self):
        return "NA"

    def __bool__(self):
        return False


Undefined = _Undefined()


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion_matrix(predicted: Sequence, truth: Sequence, positive=POSITIVE_LABEL) -> ConfusionMatrix:
    p = np.asarray(predicted, dtype=object)
    t = np.asarray(truth, dtype=object)
    if p.shape != t.shape or p.ndim != 1 or len(p) == 0:
        raise ShapeError(f"need equal-length non-empty label vectors, got {p.shape} and {t.shape}")
    pp = p == positive
    tp_ = t == positive
    return ConfusionMatrix(
        tp=int(np.sum(pp & tp_)),
        fp=int(np.sum(pp & ~tp_)),
        fn=int(np.sum(~pp & tp_)),
        tn=int(np.sum(~pp & ~tp_)),
    )


def _pct(num: int, den: int):
    return Undefined if den == 0 else 100.0 * num / den


def scores(cm: ConfusionMatrix) -> tuple:
    """(accuracy, precision, recall) in percent; zero denominators give ``Undefined``."""
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix has no rows")
    return (
        100.0 * (cm.tp + cm.tn) / cm.total,
        _pct(cm.tp, cm.tp + cm.fp),
        _pct(cm.tp, cm.tp + cm.fn),
    )


def roc_curve(scores_pos: Sequence[float], truth: Sequence, positive=POSITIVE_LABEL) -> list[tuple]:
    """ROC points ``(fpr, tpr, threshold)`` from (0, 0) to (1, 1).

    One point per distinct score, thresholds descending; rows sharing a
    score enter together.  The (0, 0) endpoint carries threshold +inf.
    """
    s = np.asarray(scores_pos, dtype=np.float64)
    t = np.asarray(truth, dtype=object) == positive
    if s.shape != t.shape or len(s) == 0:
        raise ShapeError("scores and truth must have equal non-zero length")
    n_pos = int(t.sum())
    n_neg = len(t) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateClass("ROC needs both positive and negative examples")
    order = np.argsort(-s, kind="mergesort")
    s, t = s[order], t[order]
    points = [(0.0, 0.0, math.inf)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            tp += int(t[j])
            fp += int(not t[j])
            j += 1
        points.append((fp / n_neg, tp / n_pos, float(s[i])))
        i = j
    if points[-1][:2] != (1.0, 1.0):
        points.append((1.0, 1.0, -math.inf))
    return points


def auc(roc: Sequence[tuple]) -> float:
    """Trapezoidal area under ROC points."""
    area = 0.0
    for (x0, y0, *_), (x1, y1, *_) in zip(roc, roc[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return float(area)


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    precision: object
    recall: object
    confusion: ConfusionMatrix
    roc: tuple
    auc: float

    def metrics(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall}


def evaluate(predicted, truth, scores_pos=None, positive=POSITIVE_LABEL) -> EvalReport:
    cm = confusion_matrix(predicted, truth, positive)
    acc, prec, rec = scores(cm)
    roc: tuple = ()
    area = math.nan
    if scores_pos is not None:
        roc = tuple(roc_curve(scores_pos, truth, positive))
        area = auc(roc)
    return EvalReport(acc, prec, rec, cm, roc, area)


def fmt2(v) -> str:
    return "NA" if v is Undefined else f"{v:.2f}"


def diff_report(a: EvalReport, b: EvalReport) -> dict[str, str]:
    """``b - a`` per metric, rendered to two decimals with an explicit sign."""
    out = {}
    for k, va in a.metrics().items():
        vb = b.metrics()[k]
        if va is Undefined or vb is Undefined:
            out[k] = "NA"
        else:
            d = round(vb - va, 2)
            out[k] = f"{d:+.2f}" if d != 0 else "0.00"
    return out


def write_report(report: EvalReport, path, extra: dict | None = None) -> None:
    """Flat ``key=value`` text: metrics, confusion counts, then caller extras."""
    lines = [
        f"accuracy={fmt2(report.accuracy)}",
        f"precision={fmt2(report.precision)}",
        f"recall={fmt2(report.recall)}",
        f"auc={'NA' if math.isnan(report.auc) else f'{report.auc:.6f}'}",
        f"tp={report.confusion.tp}",
        f"fp={report.confusion.fp}",
        f"fn={report.confusion.fn}",
        f"tn={report.confusion.tn}",
        f"positive_class={POSITIVE_LABEL}",
    ]
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_report(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                k, _, v = line.partition("=")
                out[k] = v
    return out


def write_roc_csv(roc: Sequence[tuple], path) -> None:
    with open(path, "w") as fh:
        fh.write("threshold,fpr,tpr\n")
        for fpr, tpr, thr in roc:
            fh.write(f"{thr!r},{fpr!r},{tpr!r}\n")
