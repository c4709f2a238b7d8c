"""Classification metrics from a confusion matrix (rows = true, cols = predicted)."""

from dataclasses import dataclass

import numpy as np

from .errors import ClassCountMismatch


@dataclass
class Metrics:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    confusion: np.ndarray

    @property
    def num_classes(self):
        return self.confusion.shape[0]

    def summary(self):
        return {k: getattr(self, k) for k in ("accuracy", "macro_precision", "macro_recall", "macro_f1",
                                             "weighted_precision", "weighted_recall", "weighted_f1")}

    def to_text(self):
        """Key-value metrics document with a per-class table and the confusion matrix."""
        lines = [f"{k}\t{v:.10f}" for k, v in self.summary().items()]
        lines.append(f"samples\t{int(self.confusion.sum())}")
        lines.append("")
        lines.append("class\tprecision\trecall\tf1\tsupport")
        for c in range(self.num_classes):
            lines.append(f"{c}\t{self.precision[c]:.10f}\t{self.recall[c]:.10f}\t{self.f1[c]:.10f}\t{int(self.support[c])}")
        lines.append("")
        lines.append("confusion")
        for row in self.confusion:
            lines.append("\t".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def confusion_matrix(y_true, y_pred, num_classes):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("label and prediction arrays differ in shape")
    if len(y_true) and (min(y_true.min(), y_pred.min()) < 0
                        or max(y_true.max(), y_pred.max()) >= num_classes):
        raise ClassCountMismatch(f"labels or predictions outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _safe_div(num, den):
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den != 0)
    return out


def metrics_from_confusion(cm):
    """Per-class P/R/F1 with zero-denominator classes scored 0; macro scores
    average over all classes, weighted ones by true-class support."""
    cm = np.asarray(cm, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ClassCountMismatch(f"confusion matrix must be square, got {cm.shape}")
    tp = np.diag(cm).astype(np.float64)
    pred = cm.sum(axis=0).astype(np.float64)
    support = cm.sum(axis=1).astype(np.float64)
    p = _safe_div(tp, pred)
    r = _safe_div(tp, support)
    f1 = _safe_div(2.0 * p * r, p + r)
    total = cm.sum()
    acc = float(tp.sum() / total) if total else 0.0
    w = support / total if total else np.zeros_like(support)
    return Metrics(acc, float(p.mean()), float(r.mean()), float(f1.mean()),
                   float((w * p).sum()), float((w * r).sum()), float((w * f1).sum()),
                   p, r, f1, support.astype(np.int64), cm)


def compute_metrics(y_true, y_pred, num_classes):
    return metrics_from_confusion(confusion_matrix(y_true, y_pred, num_classes))
