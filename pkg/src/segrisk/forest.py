"""Random forest of Gini decision trees, written against the scikit-learn estimator API."""

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import DegenerateModelError, InvalidInputError

LEAF = -1


class DecisionTree:
    """Flat-array binary tree. ``counts`` holds per-node class counts."""

    def __init__(self, feature, threshold, left, right, counts):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)

    @property
    def n_nodes(self):
        return self.feature.size

    def apply(self, X):
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            inner = feat != LEAF
            if not inner.any():
                return node
            r, n = rows[inner], node[inner]
            go_left = X[r, feat[inner]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])

    def predict_proba(self, X):
        counts = self.counts[self.apply(X)].astype(np.float64)
        return counts / counts.sum(axis=1, keepdims=True)

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["counts"])


def _best_split(x, y_onehot, parent_counts):
    """Lowest weighted Gini split of one feature: (impurity, threshold) or None."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    n = xs.size
    cuts = np.flatnonzero(xs[1:] > xs[:-1])
    if cuts.size == 0:
        return None
    left = np.cumsum(y_onehot[order], axis=0)[cuts]
    right = parent_counts - left
    n_left = (cuts + 1).astype(np.float64)
    n_right = n - n_left
    # n * weighted Gini = n_l - sum(l^2)/n_l + n_r - sum(r^2)/n_r
    score = (n_left - (left**2).sum(axis=1) / n_left) + (n_right - (right**2).sum(axis=1) / n_right)
    best = int(np.argmin(score))
    i = cuts[best]
    thr = 0.5 * (xs[i] + xs[i + 1])
    if not xs[i] <= thr < xs[i + 1]:
        thr = xs[i]
    return score[best] / n, thr


def grow_tree(X, y, n_classes, max_features, rng, min_samples_split=2):
    """Grow an unpruned tree until nodes are pure or too small to split."""
    n_features = X.shape[1]
    onehot = np.eye(n_classes, dtype=np.int64)[y]
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        counts.append(onehot[idx].sum(axis=0))
        return len(feature) - 1

    stack = [(new_node(np.arange(y.size)), np.arange(y.size))]
    while stack:
        node, idx = stack.pop()
        node_counts = counts[node]
        if idx.size < min_samples_split or np.count_nonzero(node_counts) <= 1:
            continue
        perm = rng.permutation(n_features)
        best = None
        # like scikit-learn, keep drawing features past max_features while
        # none of the drawn ones admits a split
        for pos, f in enumerate(perm):
            if pos >= max_features and best is not None:
                break
            found = _best_split(X[idx, f], onehot[idx], node_counts)
            if found is not None and (best is None or found[0] < best[0]):
                best = (found[0], found[1], int(f))
        if best is None:
            continue
        _, thr, f = best
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node] = f
        threshold[node] = float(thr)
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri))
        stack.append((left[node], li))
    return DecisionTree(feature, threshold, left, right, np.array(counts))


def _resolve_max_features(max_features, n_features):
    if max_features == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    if max_features is None:
        return n_features
    if isinstance(max_features, float):
        return max(1, int(max_features * n_features))
    return int(max_features)


class RiskForestClassifier(ClassifierMixin, BaseEstimator):
    """Bagged Gini trees with per-node feature subsampling.

    Tree ``i`` draws its bootstrap sample and feature subsets from a
    generator seeded with ``random_state + i``, so a fit is reproducible and
    independent of how the trees are scheduled.

    Parameters
    ----------
    n_estimators : int
        Number of trees.
    max_features : "sqrt", int, float or None
        Candidate features drawn per node.
    min_samples_split : int
        Nodes with fewer samples become leaves.
    n_classes : int or None
        Size of the label space; ``None`` uses ``max(y) + 1``. Fixing it keeps
        probability columns aligned when a training subset misses a class.
    random_state : int
        Master seed.
    """

    def __init__(self, n_estimators=1000, max_features="sqrt", min_samples_split=2,
                 n_classes=None, random_state=0):
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.min_samples_split = min_samples_split
        self.n_classes = n_classes
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = np.asarray(y)
        if y.dtype.kind not in "iu":
            if not np.all(y == np.round(y)):
                raise InvalidInputError("labels must be integer class indices")
            y = y.astype(np.int64)
        if y.min() < 0:
            raise InvalidInputError("labels must be non-negative")
        n_classes = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        if y.max() >= n_classes:
            raise InvalidInputError(f"label {y.max()} out of range for {n_classes} classes")
        if np.unique(y).size < 2:
            raise DegenerateModelError("random forest needs at least two classes in the training labels")
        if self.n_estimators < 1:
            raise InvalidInputError("n_estimators must be >= 1")
        n, d = X.shape
        m = _resolve_max_features(self.max_features, d)
        trees = []
        for i in range(self.n_estimators):
            rng = np.random.default_rng(int(self.random_state) + i)
            boot = rng.integers(0, n, n)
            trees.append(grow_tree(X[boot], y[boot], n_classes, m, rng, self.min_samples_split))
        self.trees_ = trees
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = d
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise InvalidInputError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        total = np.zeros((X.shape[0], self.classes_.size))
        for tree in self.trees_:
            total += tree.predict_proba(X)
        return total / len(self.trees_)

    def predict(self, X):
        # argmax keeps the lowest class on ties
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def to_dict(self):
        check_is_fitted(self, "trees_")
        return {
            "seed": int(self.random_state),
            "n_trees": len(self.trees_),
            "n_classes": int(self.classes_.size),
            "feature_dim": int(self.n_features_in_),
            "max_features": self.max_features,
            "min_samples_split": int(self.min_samples_split),
            "trees": [t.to_dict() for t in self.trees_],
        }

    @classmethod
    def from_dict(cls, d):
        model = cls(n_estimators=d["n_trees"], max_features=d.get("max_features", "sqrt"),
                    min_samples_split=d.get("min_samples_split", 2), n_classes=d["n_classes"],
                    random_state=d["seed"])
        model.trees_ = [DecisionTree.from_dict(t) for t in d["trees"]]
        model.classes_ = np.arange(d["n_classes"])
        model.n_features_in_ = d["feature_dim"]
        return model
