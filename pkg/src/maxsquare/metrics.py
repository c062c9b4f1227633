"""Evaluation metrics: confusion matrix, per-class IoU, per-class diagnostics.

A :class:`ClassReport` bundles the per-class columns that the report CSV and
figures are built from: IoU, mean max-probability of pixels predicted as the
class, and the class pixel frequency on the ground truth.  Undefined entries
(class never seen) are ``None`` and render as empty CSV fields.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .losses import ABSTAIN


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (C, C); row = true class, column = predicted

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClassReport:
    iou: list  # per-class float or None
    miou: float | None
    mean_max_prob: list  # per-class float or None
    frequency: list  # per-class float


def confusion_matrix(pred, truth, num_classes: int) -> ConfusionMatrix:
    """Tally pred/truth label pairs; abstained truth pixels are skipped."""
    pred = np.asarray(pred).reshape(-1).astype(np.int64)
    truth = np.asarray(truth).reshape(-1).astype(np.int64)
    if pred.shape != truth.shape:
        raise ShapeError(f"pred/truth lengths differ: {pred.shape} vs {truth.shape}")
    keep = truth != ABSTAIN
    pred, truth = pred[keep], truth[keep]
    if pred.size and (
        pred.min() < 0 or pred.max() >= num_classes or truth.max() >= num_classes
        or truth.min() < 0
    ):
        raise DomainError(f"labels must be in [0, {num_classes})")
    flat = truth * num_classes + pred
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


def iou_per_class(cm: ConfusionMatrix) -> list:
    """TP / (TP + FP + FN) per class; None where the class never occurs."""
    tp = np.diag(cm.counts).astype(np.float64)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp
    denom = tp + fp + fn
    return [
        float(tp[c] / denom[c]) if denom[c] > 0 else None
        for c in range(cm.num_classes)
    ]


def mean_iou(iou: list) -> float | None:
    defined = [v for v in iou if v is not None]
    return float(np.mean(defined)) if defined else None


def mean_prob_per_class(p) -> list:
    """Mean max-probability over rows argmaxing to each class; None if empty."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise ShapeError(f"expected an N x C probability map, got shape {p.shape}")
    out = []
    if p.shape[0] == 0:
        return [None] * p.shape[1]
    pred = p.argmax(axis=1)
    conf = p.max(axis=1)
    for c in range(p.shape[1]):
        sel = pred == c
        out.append(float(conf[sel].mean()) if sel.any() else None)
    return out


def class_frequency(labels, num_classes: int) -> np.ndarray:
    """Fraction of non-abstained labels per class (sums to 1 when any exist)."""
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    keep = labels != ABSTAIN
    kept = labels[keep]
    if kept.size and (kept.min() < 0 or kept.max() >= num_classes):
        raise DomainError(f"labels must be in [0, {num_classes})")
    if kept.size == 0:
        warnings.warn("all labels abstained; frequencies are all zero",
                      RuntimeWarning, stacklevel=2)
        return np.zeros(num_classes)
    return np.bincount(kept, minlength=num_classes) / kept.size


def class_report(pred, truth, probs, num_classes: int) -> ClassReport:
    """Assemble the full per-class report for one evaluation."""
    cm = confusion_matrix(pred, truth, num_classes)
    iou = iou_per_class(cm)
    return ClassReport(
        iou=iou,
        miou=mean_iou(iou),
        mean_max_prob=mean_prob_per_class(probs),
        frequency=list(class_frequency(truth, num_classes)),
    )


def _cell(v) -> str:
    return "" if v is None else f"{v:.6f}"


def emit_report(report: ClassReport, path, extra_rows=()) -> None:
    """CSV with header class,iou,mean_max_prob,frequency and a trailing miou row.

    ``extra_rows`` appends (name, value) summary rows after the miou row;
    floats are printed with 6 decimal places and None renders empty.
    """
    lines = ["class,iou,mean_max_prob,frequency"]
    for c in range(len(report.iou)):
        lines.append(
            f"{c},{_cell(report.iou[c])},{_cell(report.mean_max_prob[c])},"
            f"{_cell(report.frequency[c])}"
        )
    lines.append(f"miou,{_cell(report.miou)},,")
    for name, value in extra_rows:
        lines.append(f"{name},{_cell(value)},,")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_report(path):
    """Read back an emitted report CSV as (per-class rows, summary dict)."""
    rows, summary = [], {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "class,iou,mean_max_prob,frequency":
            raise ShapeError(f"unexpected report header: {header!r}")
        for line in fh:
            name, *cells = line.rstrip("\n").split(",")
            vals = [float(v) if v else None for v in cells]
            if name.isdigit():
                rows.append((int(name), *vals))
            else:
                summary[name] = vals[0]
    return rows, summary


def accuracy(pred, truth) -> float | None:
    """Fraction correct over non-abstained truth; None when nothing is labeled."""
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    keep = truth != ABSTAIN
    if not keep.any():
        return None
    return float((pred[keep] == truth[keep]).mean())
