"""Pixel-level evaluation: confusion matrices, micro-averaged precision and
recall, and per-class IoU / mIoU with explicit sentinel handling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import BACKGROUND, NEUTRAL, LabelMap


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts over (ground truth class, predicted class) plus sentinel tallies.

    ``unlabeled`` counts pixels the prediction left as BACKGROUND/NEUTRAL,
    per ground-truth class; ``ignored`` counts pixels skipped because their
    ground truth is in the ignore set.
    """

    matrix: np.ndarray     # (C, C) uint64, rows = gt, cols = predicted
    unlabeled: np.ndarray  # (C,) uint64
    ignored: int

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def counted(self) -> int:
        return int(self.matrix.sum(dtype=np.uint64)) + int(self.unlabeled.sum(dtype=np.uint64))

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.num_classes != other.num_classes:
            raise ValueError("cannot add confusion matrices of different class counts")
        return ConfusionMatrix(self.matrix + other.matrix,
                               self.unlabeled + other.unlabeled,
                               self.ignored + other.ignored)


def empty_confusion(num_classes: int) -> ConfusionMatrix:
    return ConfusionMatrix(np.zeros((num_classes, num_classes), dtype=np.uint64),
                           np.zeros(num_classes, dtype=np.uint64), 0)


def confusion(pred: LabelMap, gt: LabelMap, num_classes: int,
              ignore_gt: set[int] = frozenset()) -> ConfusionMatrix:
    """Tally predictions against ground truth.

    Pixels whose ground truth is in ``ignore_gt`` (or is itself a sentinel)
    are skipped; predicted sentinels count as unlabeled under their ground
    truth class.
    """
    if pred.codes.shape != gt.codes.shape:
        raise ValueError(f"prediction {pred.codes.shape} does not match "
                         f"ground truth {gt.codes.shape}")
    p = pred.codes.ravel().astype(np.int64)
    g = gt.codes.ravel().astype(np.int64)
    bad = (p >= num_classes) & (p != BACKGROUND) & (p != NEUTRAL)
    if bad.any():
        raise ValueError(f"prediction contains code {p[bad][0]} outside "
                         f"{num_classes} classes and the sentinels")
    keep = g < num_classes
    for code in ignore_gt:
        keep &= g != code
    ignored = int((~keep).sum())
    p, g = p[keep], g[keep]
    sentinel = (p == BACKGROUND) | (p == NEUTRAL)
    unlabeled = np.bincount(g[sentinel], minlength=num_classes).astype(np.uint64)
    p, g = p[~sentinel], g[~sentinel]
    flat = np.bincount(g * num_classes + p, minlength=num_classes * num_classes)
    matrix = flat.reshape(num_classes, num_classes).astype(np.uint64)
    return ConfusionMatrix(matrix, unlabeled, ignored)


def precision_recall(cm: ConfusionMatrix) -> tuple[float | None, float | None]:
    """Micro-averaged over pixels.

    Precision divides correct pixels by all class-predicted pixels; recall
    additionally counts unlabeled pixels in the denominator. A zero
    denominator yields None (not applicable).
    """
    correct = int(np.trace(cm.matrix))
    predicted = int(cm.matrix.sum())
    with_unlabeled = predicted + int(cm.unlabeled.sum())
    precision = correct / predicted if predicted > 0 else None
    recall = correct / with_unlabeled if with_unlabeled > 0 else None
    return precision, recall


def miou(cm: ConfusionMatrix) -> tuple[list[float | None], float | None]:
    """Per-class IoU and their mean.

    Unlabeled pixels count as false negatives of their ground-truth class.
    Classes absent from both prediction and ground truth get None and are
    excluded from the mean.
    """
    mat = cm.matrix.astype(np.float64)
    tp = np.diag(mat)
    fp = mat.sum(axis=0) - tp
    fn = mat.sum(axis=1) - tp + cm.unlabeled.astype(np.float64)
    union = tp + fp + fn
    ious: list[float | None] = []
    for c in range(cm.num_classes):
        ious.append(float(tp[c] / union[c]) if union[c] > 0 else None)
    present = [v for v in ious if v is not None]
    mean = sum(present) / len(present) if present else None
    return ious, mean


def format_report(cm: ConfusionMatrix, class_names) -> str:
    """Human-readable metrics table."""
    precision, recall = precision_recall(cm)
    ious, mean = miou(cm)

    def show(v):
        return "n/a" if v is None else f"{v:.4f}"

    lines = ["class             IoU", "-" * 26]
    for name, value in zip(class_names, ious):
        lines.append(f"{name:<16}  {show(value)}")
    lines.append("-" * 26)
    lines.append(f"precision  {show(precision)}")
    lines.append(f"recall     {show(recall)}")
    lines.append(f"mIoU       {show(mean)}")
    lines.append(f"pixels counted {cm.counted}, ignored {cm.ignored}")
    return "\n".join(lines)
