"""Standardization, stratified k-fold cross-validation and model files for slide risk."""

import json
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.pipeline import Pipeline
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import InvalidInputError
from .features import RISK_DISPLAY
from .forest import RiskForestClassifier
from .metrics import confusion_matrix, quadratic_weighted_kappa, roc_auc_ovr

MODEL_VERSION = 1
N_RISK = 4
# AUCs are reported from the most to the least clinically relevant category
REPORT_ORDER = (3, 2, 1, 0)


class Standardizer(TransformerMixin, BaseEstimator):
    """Zero-mean, unit-variance scaling; zero-variance columns are only centred."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        self.n_features_in_ = X.shape[1]
        return self

    def _check(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise InvalidInputError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def transform(self, X):
        return (self._check(X) - self.mean_) / self.scale_

    def inverse_transform(self, X):
        return self._check(X) * self.scale_ + self.mean_


def fit_standardizer(features):
    return Standardizer().fit(features)


def apply_standardizer(standardizer, features):
    return standardizer.transform(features)


def make_risk_pipeline(n_trees=1000, seed=0, n_classes=N_RISK):
    return Pipeline([
        ("scale", Standardizer()),
        ("forest", RiskForestClassifier(n_estimators=n_trees, n_classes=n_classes, random_state=seed)),
    ])


def stratified_folds(labels, n_folds=5, seed=0):
    """Fold index per case.

    Each class is shuffled and dealt round-robin; the dealing position
    carries over between classes so fold sizes differ by at most one. When a
    class has fewer than ``n_folds`` members the split falls back to a plain
    shuffled partition (with a warning).
    """
    labels = np.asarray(labels)
    n = labels.size
    if n < n_folds:
        raise InvalidInputError(f"{n} cases cannot be split into {n_folds} folds")
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=np.int64)
    classes, counts = np.unique(labels, return_counts=True)
    if counts.min() < n_folds:
        warnings.warn(
            f"class with {counts.min()} members < {n_folds} folds; using unstratified folds",
            stacklevel=2,
        )
        folds[rng.permutation(n)] = np.arange(n) % n_folds
        return folds
    start = 0
    for c in classes:
        members = rng.permutation(np.flatnonzero(labels == c))
        folds[members] = (start + np.arange(members.size)) % n_folds
        start = (start + members.size) % n_folds
    return folds


@dataclass
class CVResult:
    folds: np.ndarray
    proba: np.ndarray
    pred: np.ndarray
    labels: np.ndarray
    fold_auc: np.ndarray  # (n_folds, n_classes), nan where undefined
    kappa: float
    confusion: np.ndarray
    fold_models: list

    @property
    def auc_mean(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-nan column stays nan
            return np.nanmean(self.fold_auc, axis=0)

    @property
    def auc_std(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanstd(self.fold_auc, axis=0)

    def to_dict(self):
        n_classes = self.fold_auc.shape[1]
        pooled, _ = roc_auc_ovr(self.proba, self.labels, n_classes)
        return {
            "n_cases": int(self.labels.size),
            "n_folds": int(self.fold_auc.shape[0]),
            "auc": [
                {
                    "class": RISK_DISPLAY[c],
                    "index": c,
                    "mean": _num(self.auc_mean[c]),
                    "std_across_folds": _num(self.auc_std[c]),
                    "per_fold": [_num(v) for v in self.fold_auc[:, c]],
                    "pooled": _num(pooled[c]),
                }
                for c in REPORT_ORDER if c < n_classes
            ],
            "quadratic_weighted_kappa": float(self.kappa),
            "confusion_matrix": self.confusion.tolist(),
            "confusion_axes": {"rows": "reference", "columns": "prediction",
                               "labels": list(RISK_DISPLAY[:n_classes])},
            "accuracy": float(np.mean(self.pred == self.labels)),
        }

    def summary(self):
        lines = []
        for c in REPORT_ORDER:
            if c < self.fold_auc.shape[1]:
                lines.append(
                    f"{RISK_DISPLAY[c]}: AUC of {self.auc_mean[c]:.2f} (±{self.auc_std[c]:.2f})"
                )
        lines.append(f"quadratic weighted kappa: {self.kappa:.2f}")
        lines.append("(± is the standard deviation across folds)")
        return "\n".join(lines)


def _num(v):
    return None if np.isnan(v) else float(v)


def stratified_kfold_cv(features, labels, n_folds=5, n_trees=1000, seed=0, n_classes=N_RISK,
                        estimator=None):
    """Fit scaler + forest on ``n_folds - 1`` folds, predict the held-out fold.

    Returns pooled out-of-fold predictions, per-fold one-vs-rest AUCs, the
    pooled quadratic weighted kappa and confusion matrix.
    """
    X = check_array(features, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    if y.size != X.shape[0]:
        raise InvalidInputError(f"{X.shape[0]} feature rows but {y.size} labels")
    if y.size < n_folds:
        raise InvalidInputError(f"{y.size} cases cannot be split into {n_folds} folds")
    folds = stratified_folds(y, n_folds, seed)
    template = estimator if estimator is not None else make_risk_pipeline(n_trees, seed, n_classes)
    proba = np.zeros((y.size, n_classes))
    fold_auc = np.full((n_folds, n_classes), np.nan)
    models = []
    for k in range(n_folds):
        train, test = folds != k, folds == k
        model = clone(template).fit(X[train], y[train])
        proba[test] = model.predict_proba(X[test])
        fold_auc[k], _ = roc_auc_ovr(proba[test], y[test], n_classes)
        models.append(model)
    pred = np.argmax(proba, axis=1)
    kappa = quadratic_weighted_kappa(y, pred, n_classes)
    cm = confusion_matrix(pred, y, n_classes)
    return CVResult(folds, proba, pred, y, fold_auc, kappa, cm, models)


def pipeline_to_dict(model):
    scale, forest = model.named_steps["scale"], model.named_steps["forest"]
    d = {"version": MODEL_VERSION}
    d.update(forest.to_dict())
    d["standardizer"] = {"mean": scale.mean_.tolist(), "std": scale.scale_.tolist()}
    return d


def pipeline_from_dict(d):
    if d.get("version") != MODEL_VERSION:
        raise InvalidInputError(f"unsupported model version {d.get('version')!r}")
    scale = Standardizer()
    scale.mean_ = np.asarray(d["standardizer"]["mean"], dtype=np.float64)
    scale.scale_ = np.asarray(d["standardizer"]["std"], dtype=np.float64)
    scale.n_features_in_ = scale.mean_.size
    return Pipeline([("scale", scale), ("forest", RiskForestClassifier.from_dict(d))])


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(pipeline_to_dict(model), fh, separators=(",", ":"))


def load_model(path):
    with open(path) as fh:
        return pipeline_from_dict(json.load(fh))
