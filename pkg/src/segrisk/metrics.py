"""Evaluation metrics: confusion matrix, Dice / pixel F1, quadratic kappa, OvR AUC."""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .exceptions import InvalidInputError, UndefinedMetricError
from .tensor_core import IGNORE, check_labels


@dataclass
class DiceReport:
    """Per-class scores; ``nan`` marks classes without a defined score."""

    per_class: np.ndarray
    mean: float
    absent: list = field(default_factory=list)

    def to_dict(self):
        return {
            "per_class": [None if np.isnan(v) else float(v) for v in self.per_class],
            "mean": None if np.isnan(self.mean) else float(self.mean),
            "absent": [int(c) for c in self.absent],
        }


def confusion_matrix(pred, ref, n_classes):
    """Counts with rows = reference class, columns = predicted class.

    Pixels whose reference is IGNORE are skipped.
    """
    ref = check_labels(ref, n_classes)
    pred = check_labels(pred, shape=ref.shape)
    keep = ref != IGNORE
    r = ref[keep].astype(np.intp).ravel()
    p = pred[keep].astype(np.intp).ravel()
    if p.size and p.max() >= n_classes:
        raise InvalidInputError(f"prediction {p.max()} out of range for {n_classes} classes")
    return np.bincount(r * n_classes + p, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def dice_from_confusion(cm, absent_as_zero=False):
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    absent = np.flatnonzero(denom == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), np.nan)
    if absent_as_zero:
        per_class = np.where(denom > 0, per_class, 0.0)
        mean = float(per_class.mean())
    else:
        defined = per_class[~np.isnan(per_class)]
        mean = float(defined.mean()) if defined.size else float("nan")
    return DiceReport(per_class, mean, absent.tolist())


def dice_scores(pred, ref, n_classes, absent_as_zero=False):
    """Per-class Dice ``2TP / (2TP + FP + FN)`` and their mean.

    Classes with neither reference nor predicted pixels are reported as
    absent and left out of the mean, unless ``absent_as_zero`` is set, in
    which case they score 0 and count towards the mean.
    """
    return dice_from_confusion(confusion_matrix(pred, ref, n_classes), absent_as_zero)


def pixel_f1(pred, ref, n_classes, absent_as_zero=False):
    # pixel-level F1 and Dice are the same quantity
    return dice_scores(pred, ref, n_classes, absent_as_zero)


def quadratic_weighted_kappa(ref, pred, n_categories):
    """Cohen's kappa with weights ``(i - j)^2 / (N - 1)^2``.

    If the chance-expected weighted disagreement is zero, both raters used
    one and the same category for every case; that is perfect agreement and
    1.0 is returned.
    """
    ref = np.asarray(ref)
    pred = np.asarray(pred)
    if ref.ndim != 1 or ref.shape != pred.shape or ref.size == 0:
        raise InvalidInputError("kappa needs two equal-length, non-empty 1-D sequences")
    if n_categories < 2:
        raise InvalidInputError("kappa needs at least 2 categories")
    for name, v in (("ref", ref), ("pred", pred)):
        if v.min() < 0 or v.max() >= n_categories:
            raise InvalidInputError(f"{name} values must lie in [0, {n_categories})")
    n = n_categories
    observed = np.bincount(ref * n + pred, minlength=n * n).reshape(n, n).astype(np.float64)
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / observed.sum()
    i, j = np.indices((n, n))
    weights = (i - j) ** 2 / (n - 1) ** 2
    num = float((weights * observed).sum())
    den = float((weights * expected).sum())
    if den == 0:
        if num == 0:
            return 1.0
        raise UndefinedMetricError("expected weighted disagreement is zero")
    return 1.0 - num / den


def binary_auc(scores, positive):
    """P(score of a positive > score of a negative), ties counted as 1/2.

    Computed from average ranks (the Mann-Whitney U statistic). Returns
    ``nan`` when either group is empty.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc_ovr(scores, labels, n_classes):
    """One-vs-rest AUC per class plus the mean over classes with a defined AUC."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape != (labels.size, n_classes):
        raise InvalidInputError(f"scores must have shape ({labels.size}, {n_classes}), got {scores.shape}")
    per_class = np.array([binary_auc(scores[:, c], labels == c) for c in range(n_classes)])
    defined = per_class[~np.isnan(per_class)]
    mean = float(defined.mean()) if defined.size else float("nan")
    return per_class, mean
