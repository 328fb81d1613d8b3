"""Segmentation losses with analytic gradients.

Every loss takes per-pixel scores shaped ``(..., C)`` and a label map shaped
``(...)`` and returns a :class:`LossOutput` whose ``grad`` has the shape of
the scores. Values are averaged over non-ignored pixels.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import (
    EmptyInputError,
    InvalidInputError,
    InvalidParameterError,
    NumericError,
)
from .tensor_core import IGNORE, check_labels, check_scores, softmax

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossOutput:
    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidParameterError(f"focal alpha must be > 0, got {self.alpha}")
        if not self.gamma >= 0:
            raise InvalidParameterError(f"focal gamma must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class BiTemperedParams:
    t1: float = 0.8
    t2: float = 1.2

    def __post_init__(self):
        if not 0 < self.t1 <= 1:
            raise InvalidParameterError(f"t1 must lie in (0, 1], got {self.t1}")
        if not self.t2 >= 1:
            raise InvalidParameterError(f"t2 must be >= 1, got {self.t2}")


def _flatten(scores, labels, name="logits"):
    scores = check_scores(scores, name)
    n_classes = scores.shape[-1]
    labels = check_labels(labels, n_classes, shape=scores.shape[:-1])
    flat_scores = scores.reshape(-1, n_classes)
    flat_labels = labels.reshape(-1)
    valid = flat_labels != IGNORE
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EmptyInputError("no non-ignored pixels to score")
    return flat_scores, flat_labels, valid, n_valid


# --------------------------------------------------------------------------
# categorical cross-entropy and focal loss
# --------------------------------------------------------------------------


def cc_loss(logits, labels, class_weights=None):
    """Categorical cross-entropy on softmax probabilities.

    ``class_weights`` optionally scales each pixel's term by the weight of
    its reference class; the mean is still taken over the pixel count.
    """
    z, y, valid, n = _flatten(logits, labels)
    n_classes = z.shape[1]
    if class_weights is None:
        w = np.ones(n_classes)
    else:
        w = np.asarray(class_weights, dtype=np.float64)
        if w.shape != (n_classes,) or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidParameterError(f"class_weights must be {n_classes} non-negative reals")
    p = softmax(z[valid])
    k = y[valid].astype(np.intp)
    rows = np.arange(len(k))
    pk = np.maximum(p[rows, k], PROB_FLOOR)
    wk = w[k]
    value = float(np.sum(-wk * np.log(pk)) / n)

    g = p
    g[rows, k] -= 1.0
    g *= (wk / n)[:, None]
    grad = np.zeros_like(z)
    grad[valid] = g
    return LossOutput(value, grad.reshape(np.shape(logits)))


def focal_loss(logits, labels, alpha=0.25, gamma=2.0):
    """Focal loss ``-alpha (1 - p)^gamma log p`` on the reference-class probability."""
    FocalParams(alpha, gamma)
    z, y, valid, n = _flatten(logits, labels)
    p = softmax(z[valid])
    k = y[valid].astype(np.intp)
    rows = np.arange(len(k))
    pt = p[rows, k]
    pc = np.maximum(pt, PROB_FLOOR)
    q = 1.0 - pt
    logp = np.log(pc)
    value = float(np.sum(-alpha * q**gamma * logp) / n)

    # d/dpt of the per-pixel term, then through the softmax: dpt/dz_j = pt (1[j=k] - p_j)
    if gamma == 0:
        dpow = np.zeros_like(q)
    else:
        safe = q > 0
        dpow = np.zeros_like(q)
        dpow[safe] = gamma * q[safe] ** (gamma - 1.0)
    dl_dpt = alpha * (dpow * logp - q**gamma / pc)
    onehot = np.zeros_like(p)
    onehot[rows, k] = 1.0
    g = (dl_dpt * pt)[:, None] * (onehot - p) / n
    grad = np.zeros_like(z)
    grad[valid] = g
    return LossOutput(value, grad.reshape(np.shape(logits)))


# --------------------------------------------------------------------------
# tempered functions and the bi-tempered loss
# --------------------------------------------------------------------------


def tempered_exp(x, t):
    if not t > 0:
        raise InvalidParameterError(f"temperature must be > 0, got {t}")
    x = np.asarray(x, dtype=np.float64)
    if t == 1.0:
        return np.exp(x)
    u = (1.0 - t) * x
    # log1p keeps full precision when t is close to 1, where a plain power of
    # the rounded base 1 + u would amplify its rounding error by 1/(1-t)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.exp(np.log1p(np.maximum(u, -1.0)) / (1.0 - t))
    # outside the support: 0 for t < 1, the pole for t > 1
    return np.where(u <= -1.0, 0.0 if t < 1 else np.inf, out)


def tempered_log(x, t):
    if not t > 0:
        raise InvalidParameterError(f"temperature must be > 0, got {t}")
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise InvalidInputError("tempered_log is defined for positive arguments only")
    if t == 1.0:
        return np.log(x)
    # expm1 avoids the cancellation in x**(1-t) - 1 when t is close to 1
    return np.expm1((1.0 - t) * np.log(x)) / (1.0 - t)


def _normalizer_bracket(n_classes, t):
    # with activations shifted so max = 0, the normalizer lies in
    # [0, -log_t(1/C)]: at 0 the largest term alone is 1, at the upper end
    # every term is at most 1/C
    return -float(tempered_log(1.0 / n_classes, t))


def tempered_softmax(activations, t2, max_iter=200):
    """Heavy-tailed softmax ``exp_t2(a_i - lam)`` with ``lam`` normalizing the sum to 1.

    ``lam`` is found per pixel by Newton steps on the bracketing interval,
    falling back to bisection whenever a step leaves the bracket.
    """
    if not t2 >= 1:
        raise InvalidParameterError(f"t2 must be >= 1, got {t2}")
    a = check_scores(activations, "activations")
    if t2 == 1.0:
        return softmax(a)
    shape = a.shape
    a = a.reshape(-1, shape[-1])
    a = a - a.max(axis=1, keepdims=True)
    n_rows, n_classes = a.shape
    one_minus_t = 1.0 - t2
    # exp_t(x) >= exp(x) for x <= 0 and t >= 1, so the ordinary log-sum-exp
    # still leaves the sum >= 1: a valid lower end that is usually close
    lo = np.log(np.exp(a).sum(axis=1))
    hi = np.full(n_rows, _normalizer_bracket(n_classes, t2))
    lam = lo.copy()
    active = np.arange(n_rows)
    work = a
    for _ in range(max_iter):
        if active.size == 0:
            break
        lam_a = lam[active]
        # shifted arguments are <= 0, so for t2 > 1 the base is >= 1 and
        # d exp_t(u)/du = exp_t(u)^t2 = exp_t(u) / base
        u = one_minus_t * (work - lam_a[:, None])
        y = _tempered_exp_inc(u, one_minus_t)
        base = 1.0 + u
        f = y.sum(axis=1) - 1.0
        slope = (y / base).sum(axis=1)
        pos = f > 0
        lo[active[pos]] = lam_a[pos]
        hi[active[~pos]] = lam_a[~pos]
        step = lam_a + f / slope
        l_a, h_a = lo[active], hi[active]
        outside = (step <= l_a) | (step >= h_a)
        new = np.where(outside, 0.5 * (l_a + h_a), step)
        tol = 4 * np.finfo(float).eps * (1.0 + np.abs(new))
        done = (f == 0) | (np.abs(new - lam_a) <= tol) | (h_a - l_a <= tol)
        lam[active] = np.where(f == 0, lam_a, new)
        if done.any():
            active = active[~done]
            work = a[active]
    else:
        if active.size:
            raise NumericError(f"tempered softmax normalizer did not converge for {active.size} rows")
    return _tempered_exp_inc(one_minus_t * (a - lam[:, None]), one_minus_t).reshape(shape)


def _tempered_exp_inc(u, one_minus_t):
    """``(1 + u)^(1/(1-t))`` for ``u > -1``.

    Rounding ``1 + u`` costs one ulp, which the power amplifies by
    ``1/|1-t|``; near ``t = 1`` go through ``log1p(u)`` instead.
    """
    if abs(one_minus_t) >= 0.05:
        return (1.0 + u) ** (1.0 / one_minus_t)
    return np.exp(np.log1p(u) / one_minus_t)


def tempered_softmax_vjp(probs, upstream, t2):
    """Pull ``upstream`` (dL/dprobs) back through :func:`tempered_softmax`.

    Implicit differentiation of the normalization constraint gives
    ``dp_i/da_j = p_i^t (1[i=j] - p_j^t / sum_k p_k^t)``.
    """
    pt = probs**t2
    w = pt / pt.sum(axis=-1, keepdims=True)
    gp = upstream * pt
    return gp - w * gp.sum(axis=-1, keepdims=True)


def bitempered_loss(logits, labels, t1=0.8, t2=1.2):
    """Bi-tempered logistic loss with one-hot references."""
    BiTemperedParams(t1, t2)
    z, y, valid, n = _flatten(logits, labels)
    p = tempered_softmax(z[valid], t2)
    k = y[valid].astype(np.intp)
    rows = np.arange(len(k))
    pk = np.maximum(p[rows, k], PROB_FLOOR)
    e = 2.0 - t1
    # one-hot y: y log_t1 y = 0 and sum_i y_i^(2-t1) = 1
    per_pixel = -tempered_log(pk, t1) - 1.0 / e + (p**e).sum(axis=1) / e
    value = float(per_pixel.sum() / n)

    dl_dp = p ** (1.0 - t1)
    dl_dp[rows, k] -= pk ** (-t1)
    g = tempered_softmax_vjp(p, dl_dp, t2) / n
    grad = np.zeros_like(z)
    grad[valid] = g
    return LossOutput(value, grad.reshape(np.shape(logits)))


# --------------------------------------------------------------------------
# Lovasz-softmax
# --------------------------------------------------------------------------


def lovasz_grad_vector(gt_sorted):
    """Gradient of the Lovasz extension of the Jaccard loss at sorted errors.

    ``gt_sorted`` is the 0/1 foreground indicator ordered by decreasing
    error; a 2-D input is treated column-wise.
    """
    gt = np.asarray(gt_sorted, dtype=np.float64)
    if gt.shape[0] == 0:
        raise EmptyInputError("empty ground-truth sequence")
    n_fg = gt.sum(axis=0)
    if np.any(n_fg == 0):
        raise InvalidInputError("class absent from the ground truth; skip it")
    intersection = n_fg - np.cumsum(gt, axis=0)
    union = n_fg + np.cumsum(1.0 - gt, axis=0)
    jaccard = 1.0 - intersection / union
    jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def _lovasz_flat(p, y):
    """Loss and d/dp for ``p`` (N, C), labels ``y`` (N,) with no ignored rows."""
    n_classes = p.shape[1]
    fg = y[:, None] == np.arange(n_classes)[None, :]
    present = np.flatnonzero(fg.any(axis=0))
    if present.size == 0:
        raise EmptyInputError("no class present in the reference")
    fg = fg[:, present].astype(np.float64)
    errors = np.abs(fg - p[:, present])
    # stable descending sort: equal errors keep the original pixel order
    order = np.argsort(-errors, axis=0, kind="stable")
    err_sorted = np.take_along_axis(errors, order, axis=0)
    fg_sorted = np.take_along_axis(fg, order, axis=0)
    g = lovasz_grad_vector(fg_sorted)
    n_present = present.size
    value = float(np.sum(err_sorted * g) / n_present)

    d_err = np.empty_like(errors)
    np.put_along_axis(d_err, order, g, axis=0)
    grad = np.zeros_like(p)
    grad[:, present] = d_err * (1.0 - 2.0 * fg) / n_present
    return value, grad


def lovasz_softmax_loss(probs, labels):
    """Lovasz-softmax averaged over the classes present in ``labels``.

    The gradient is with respect to ``probs``.
    """
    p, y, valid, _ = _flatten(probs, labels, "probabilities")
    value, g = _lovasz_flat(p[valid], y[valid])
    grad = np.zeros_like(p)
    grad[valid] = g
    return LossOutput(value, grad.reshape(np.shape(probs)))


def lovasz_softmax_loss_logits(logits, labels):
    """Lovasz-softmax on ``softmax(logits)`` with the gradient w.r.t. the logits."""
    z, y, valid, _ = _flatten(logits, labels)
    p = softmax(z[valid])
    value, gp = _lovasz_flat(p, y[valid])
    g = p * (gp - (gp * p).sum(axis=1, keepdims=True))
    grad = np.zeros_like(z)
    grad[valid] = g
    return LossOutput(value, grad.reshape(np.shape(logits)))


# --------------------------------------------------------------------------
# registry and gradient checking
# --------------------------------------------------------------------------

LOSS_KINDS = ("cc", "focal", "bitempered", "lovasz")


def make_loss(kind, **params):
    """Return ``fn(logits, labels) -> LossOutput`` for a loss name.

    Unused parameters (e.g. ``alpha`` for ``cc``) are ignored so a single
    flag set can configure every loss.
    """
    if kind == "cc":
        weights = params.get("class_weights")
        return lambda z, y: cc_loss(z, y, class_weights=weights)
    if kind == "focal":
        fp = FocalParams(params.get("alpha", 0.25), params.get("gamma", 2.0))
        return lambda z, y: focal_loss(z, y, alpha=fp.alpha, gamma=fp.gamma)
    if kind == "bitempered":
        bp = BiTemperedParams(params.get("t1", 0.8), params.get("t2", 1.2))
        return lambda z, y: bitempered_loss(z, y, t1=bp.t1, t2=bp.t2)
    if kind == "lovasz":
        return lovasz_softmax_loss_logits
    raise InvalidParameterError(f"unknown loss {kind!r}; expected one of {LOSS_KINDS}")


def finite_difference_check(loss_fn, x, epsilon=1e-5):
    """Max over coordinates of ``|analytic - numeric| / max(1, |numeric|)``.

    ``loss_fn(x)`` must return a :class:`LossOutput`; the numeric gradient
    uses central differences with step ``epsilon``.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise InvalidParameterError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    x = np.array(x, dtype=np.float64)
    analytic = np.asarray(loss_fn(x).grad, dtype=np.float64)
    flat = x.reshape(-1)
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        up = loss_fn(x).value
        flat[i] = orig - epsilon
        down = loss_fn(x).value
        flat[i] = orig
        numeric[i] = (up - down) / (2.0 * epsilon)
    diff = np.abs(analytic.reshape(-1) - numeric)
    return float(np.max(diff / np.maximum(1.0, np.abs(numeric))))
