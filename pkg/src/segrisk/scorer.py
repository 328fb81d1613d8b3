"""Per-pixel MLP scorer over windowed colour features.

Each pixel is described by its RGB value plus the per-channel mean and
standard deviation over a ``k x k`` window (edge-clamped), i.e. 9 features.
The features are standardised with a fixed per-feature shift and scale and
fed through one ReLU hidden layer to ``C`` logits.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from .exceptions import InvalidInputError, InvalidParameterError

N_FEATURES = 9
WEIGHTS_VERSION = 1


def window_features(rgb, k=5):
    """``(H, W, 9)`` features: raw channels, window means, window stds."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InvalidInputError(f"expected an (H, W, 3) image, got shape {rgb.shape}")
    size = (k, k, 1)
    mean = uniform_filter(rgb, size=size, mode="nearest")
    sq = uniform_filter(rgb * rgb, size=size, mode="nearest")
    std = np.sqrt(np.maximum(sq - mean * mean, 0.0))
    return np.concatenate([rgb, mean, std], axis=2)


@dataclass
class PixelScorer:
    w1: np.ndarray  # (9, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, C)
    b2: np.ndarray  # (C,)
    k: int = 5
    # fixed input standardisation, not trained
    shift: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    scale: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES))

    @property
    def hidden(self):
        return self.w1.shape[1]

    @property
    def n_classes(self):
        return self.w2.shape[1]

    def params(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def copy(self):
        return PixelScorer(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(), self.k,
                           self.shift.copy(), self.scale.copy())

    def folded(self):
        """First-layer weights and bias acting on raw features."""
        w1 = self.w1 / self.scale[:, None]
        return w1, self.b1 - self.shift @ w1

    def to_dict(self):
        # the standardisation is folded into the first layer, so files only
        # ever describe a network on raw features
        w1, b1 = self.folded()
        layers = []
        for a in (w1, b1, self.w2, self.b2):
            m = a.reshape(-1, a.shape[-1]) if a.ndim == 2 else a.reshape(1, -1)
            layers.append({"rows": m.shape[0], "cols": m.shape[1], "data": m.ravel().tolist()})
        return {"version": WEIGHTS_VERSION, "k": self.k, "H": self.hidden, "C": self.n_classes,
                "layers": layers}

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != WEIGHTS_VERSION:
            raise InvalidInputError(f"unsupported weights version {d.get('version')!r}")
        mats = [np.asarray(l["data"], dtype=np.float64).reshape(l["rows"], l["cols"]) for l in d["layers"]]
        w1, b1, w2, b2 = mats
        return cls(w1, b1.ravel(), w2, b2.ravel(), int(d["k"]))


def feature_stats(feature_maps):
    """Per-feature mean and std over all pixels; (near-)zero stds become 1.

    Two passes over the maps, so constant features give an exact zero
    variance rather than a cancellation residue.
    """
    total = np.zeros(N_FEATURES)
    n = 0
    for f in feature_maps:
        x = f.reshape(-1, N_FEATURES)
        total += x.sum(axis=0)
        n += x.shape[0]
    if n == 0:
        raise InvalidInputError("no pixels to compute feature statistics")
    mean = total / n
    sq = np.zeros(N_FEATURES)
    for f in feature_maps:
        d = f.reshape(-1, N_FEATURES) - mean
        sq += (d * d).sum(axis=0)
    std = np.sqrt(sq / n)
    return mean, np.where(std > 1e-9 * np.maximum(1.0, np.abs(mean)), std, 1.0)


def init_model(seed, n_classes, hidden=32, k=5, shift=None, scale=None):
    """He-initialised weights (variance ``2 / fan_in``), zero biases."""
    if n_classes < 2:
        raise InvalidParameterError("the scorer needs at least two classes")
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0.0, np.sqrt(2.0 / N_FEATURES), size=(N_FEATURES, hidden))
    w2 = rng.normal(0.0, np.sqrt(2.0 / hidden), size=(hidden, n_classes))
    model = PixelScorer(w1, np.zeros(hidden), w2, np.zeros(n_classes), k)
    if shift is not None:
        model.shift = np.asarray(shift, dtype=np.float64).copy()
    if scale is not None:
        model.scale = np.asarray(scale, dtype=np.float64).copy()
    return model


def forward_features(model, feats):
    """Logits for precomputed raw features ``(..., 9)``; returns ``(logits, cache)``."""
    x = (feats.reshape(-1, N_FEATURES) - model.shift) / model.scale
    pre = x @ model.w1 + model.b1
    h = np.maximum(pre, 0.0)
    logits = h @ model.w2 + model.b2
    return logits.reshape(feats.shape[:-1] + (model.n_classes,)), (x, pre, h)


def forward(model, rgb):
    return forward_features(model, window_features(rgb, model.k))


def backward(model, cache, dlogits):
    """Parameter gradients given dL/dlogits shaped like the logits."""
    x, pre, h = cache
    g = dlogits.reshape(-1, model.n_classes)
    gw2 = h.T @ g
    gb2 = g.sum(axis=0)
    gh = (g @ model.w2.T) * (pre > 0)
    gw1 = x.T @ gh
    gb1 = gh.sum(axis=0)
    return {"w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2}
