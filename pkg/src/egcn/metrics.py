"""Accuracy, NLL, ROC and AUC for binary node classification."""

import csv
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self):
        return (self.tp + self.tn) / self.total


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    fpr: float
    tpr: float


def _array(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def predict(log_probs):
    """Row-wise argmax; exact ties go to the lowest class index."""
    return np.argmax(_array(log_probs), axis=1)


def confusion(predictions, labels):
    p = np.asarray(predictions).astype(np.int64)
    y = np.asarray(labels).astype(np.int64)
    if p.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    return ConfusionCounts(tp=int(np.sum((p == 1) & (y == 1))), tn=int(np.sum((p == 0) & (y == 0))),
                           fp=int(np.sum((p == 1) & (y == 0))), fn=int(np.sum((p == 0) & (y == 1))))


def accuracy(log_probs, labels):
    """(TP + TN) / n with class 1 as the positive class."""
    lp = _array(log_probs)
    if lp.shape[0] == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return confusion(predict(lp), labels).accuracy


def nll(log_probs, labels):
    """Mean negative log-likelihood of the true class (reporting only, no tape)."""
    lp = _array(log_probs)
    y = np.asarray(labels, dtype=np.int64)
    if lp.shape[0] == 0:
        raise ValueError("nll of an empty set is undefined")
    return float(-lp[np.arange(lp.shape[0]), y].mean())


def positive_scores(log_probs):
    """Probability of class 1, used as the ROC score."""
    return np.exp(_array(log_probs)[:, 1])


def _counts(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC/AUC need both classes present")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each block of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y == 1)[ends]
    fp = np.cumsum(y == 0)[ends]
    return s[ends], tp, fp, n_pos, n_neg


def roc_curve(scores, labels):
    """ROC points for thresholds at every distinct score, highest first.

    A sample is called positive when its score >= threshold, so tied samples
    cross a threshold together. The first point is the (0, 0) sentinel with
    threshold +inf; the lowest threshold always lands on (1, 1).
    """
    thr, tp, fp, n_pos, n_neg = _counts(scores, labels)
    points = [RocPoint(float("inf"), 0.0, 0.0)]
    points += [RocPoint(float(t), f / n_neg, p / n_pos) for t, p, f in zip(thr, tp, fp)]
    return points


def auc(scores, labels):
    """Trapezoidal area under the ROC curve.

    The trapezoids are summed in integer counts, so the result equals the
    tie-corrected pair statistic (wins + ties / 2) / (n_pos * n_neg) up to a
    single rounding, and auc(s) + auc(-s) == 1 holds exactly.
    """
    _, tp, fp, n_pos, n_neg = _counts(scores, labels)
    tp = np.r_[0, tp].astype(object)  # python ints: no overflow for any n
    fp = np.r_[0, fp].astype(object)
    twice_area = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    denom = 2 * n_pos * n_neg
    other = denom - twice_area
    if twice_area <= other:
        return twice_area / denom
    return 1.0 - other / denom


def write_roc_csv(points, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr"])
        for p in points:
            w.writerow([repr(p.threshold), repr(p.fpr), repr(p.tpr)])
