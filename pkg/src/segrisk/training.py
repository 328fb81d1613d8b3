"""Training loop, learning-rate schedule and evaluation for the pixel scorer."""

import csv
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import DivergenceError, EmptyInputError, InvalidParameterError
from .losses import LOSS_KINDS, make_loss
from .metrics import dice_scores
from .scorer import backward, feature_stats, forward_features, init_model, window_features
from .tensor_core import argmax_decode, check_labels

log = logging.getLogger(__name__)

DICE_EPS = 1e-6


@dataclass
class TrainConfig:
    loss_kind: str = "cc"
    loss_params: dict = field(default_factory=dict)
    initial_lr: float = 1e-4
    plateau_factor: float = 0.5
    plateau_patience: int = 20
    early_stop_patience: int = 50
    max_epochs: int = 200
    iterations_per_epoch: int = 50
    batch_size: int = 5
    hidden: int = 32
    augment: bool = True
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidParameterError(f"unknown loss {self.loss_kind!r}; expected one of {LOSS_KINDS}")
        if not self.initial_lr > 0:
            raise InvalidParameterError("initial_lr must be > 0")
        if not 0 < self.plateau_factor < 1:
            raise InvalidParameterError("plateau_factor must lie in (0, 1)")
        for name in ("plateau_patience", "early_stop_patience", "max_epochs",
                     "iterations_per_epoch", "batch_size"):
            if getattr(self, name) < 1:
                raise InvalidParameterError(f"{name} must be >= 1")


@dataclass
class TrainLog:
    """One row per epoch; row 0 scores the initial weights before any update."""

    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_dice: list = field(default_factory=list)
    lr: list = field(default_factory=list)

    def append(self, epoch, train_loss, val_loss, val_dice, lr):
        self.epoch.append(epoch)
        self.train_loss.append(float(train_loss))
        self.val_loss.append(float(val_loss))
        self.val_dice.append(float(val_dice))
        self.lr.append(float(lr))

    def __len__(self):
        return len(self.epoch)

    def rows(self):
        return zip(self.epoch, self.train_loss, self.val_loss, self.val_dice, self.lr)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "val_dice", "lr"])
            for e, tl, vl, vd, lr in self.rows():
                w.writerow([e, repr(tl), repr(vl), repr(vd), repr(lr)])


class TileSet:
    """Paired RGB tiles and label maps with cached window features."""

    def __init__(self, images, masks, k=5):
        if len(images) != len(masks):
            raise InvalidParameterError(f"{len(images)} images but {len(masks)} masks")
        if not images:
            raise EmptyInputError("empty tile set")
        self.images = [np.asarray(im, dtype=np.float64) for im in images]
        self.masks = [check_labels(m, shape=im.shape[:2]) for im, m in zip(self.images, masks)]
        self.k = k
        self._feats = None

    def __len__(self):
        return len(self.images)

    @property
    def features(self):
        if self._feats is None:
            self._feats = [window_features(im, self.k) for im in self.images]
        return self._feats

    def n_classes(self):
        return int(max(int(m[m != 255].max(initial=0)) for m in self.masks)) + 1


class Dataset(NamedTuple):
    train: TileSet
    val: TileSet


def lr_schedule(log, config):
    """Learning rate for the next epoch.

    The rate is multiplied by ``plateau_factor`` each time validation mean
    Dice fails to beat its best value by more than 1e-6 for
    ``plateau_patience`` consecutive epochs since the last reduction.
    """
    lr = config.initial_lr
    dice = log.val_dice
    if not dice:
        return lr
    best, stale = dice[0], 0
    for d in dice[1:]:
        if d > best + DICE_EPS:
            best, stale = d, 0
        else:
            stale += 1
            if stale >= config.plateau_patience:
                lr *= config.plateau_factor
                stale = 0
    return lr


# dihedral transforms of a square tile: (number of 90 degree turns, flip)
_DIHEDRAL = [(r, f) for f in (False, True) for r in range(4)]


def _transform(arr, r, flip):
    if flip:
        arr = arr[:, ::-1]
    return np.rot90(arr, r, axes=(0, 1))


def _batch_loss(model, feats, masks, loss_fn):
    """Loss over the stacked batch, so Lovasz averages over classes present in the batch."""
    x = np.concatenate([f.reshape(-1, f.shape[-1]) for f in feats])
    y = np.concatenate([m.reshape(-1) for m in masks])
    logits, cache = forward_features(model, x)
    out = loss_fn(logits, y)
    return float(out.value), out.grad, cache


def dataset_loss(model, tiles, loss_fn):
    values = []
    for f, m in zip(tiles.features, tiles.masks):
        logits, _ = forward_features(model, f)
        values.append(loss_fn(logits, m).value)
    return float(np.mean(values))


def _validate(model, tiles, loss_fn, n_classes):
    """Mean per-tile loss and mean Dice from a single forward pass."""
    values, preds = [], []
    for f, m in zip(tiles.features, tiles.masks):
        logits, _ = forward_features(model, f)
        values.append(loss_fn(logits, m).value)
        preds.append(argmax_decode(logits))
    return float(np.mean(values)), evaluate(model, tiles, n_classes, predictions=preds).mean


def predict_tiles(model, tiles):
    return [argmax_decode(forward_features(model, f)[0]) for f in tiles.features]


@dataclass
class EvalReport:
    per_tile: list  # DiceReport per tile
    per_class: np.ndarray  # mean over tiles, nan where no tile defines the class
    mean: float


def evaluate(model, tiles, n_classes=None, predictions=None):
    """Dice per tile, then per class averaged over tiles, then the class mean."""
    if len(tiles) == 0:
        raise EmptyInputError("nothing to evaluate")
    n_classes = n_classes or model.n_classes
    preds = predictions if predictions is not None else predict_tiles(model, tiles)
    reports = [dice_scores(p, m, n_classes) for p, m in zip(preds, tiles.masks)]
    table = np.array([r.per_class for r in reports])
    defined = ~np.isnan(table)
    with np.errstate(invalid="ignore"):
        per_class = np.where(defined.any(axis=0), np.nansum(table, axis=0) / np.maximum(defined.sum(axis=0), 1), np.nan)
    valid = per_class[~np.isnan(per_class)]
    return EvalReport(reports, per_class, float(valid.mean()) if valid.size else float("nan"))


def train(dataset, config, n_classes=None, callback=None):
    """Minibatch SGD on the scorer; returns ``(best_model, TrainLog)``.

    The returned weights are those of the epoch with the lowest validation
    loss (epoch 0 being the initial weights).
    """
    train_set, val_set = dataset
    n_classes = n_classes or max(train_set.n_classes(), val_set.n_classes())
    loss_fn = make_loss(config.loss_kind, **config.loss_params)
    rng = np.random.default_rng(config.seed)
    feats, masks = train_set.features, train_set.masks
    shift, scale = feature_stats(feats) if config.standardize else (None, None)
    model = init_model(config.seed, n_classes, hidden=config.hidden, k=train_set.k, shift=shift, scale=scale)
    square = all(f.shape[0] == f.shape[1] for f in feats)
    transforms = _DIHEDRAL if square else [(0, False), (2, False), (0, True), (2, True)]

    trainlog = TrainLog()
    val_loss, val_dice = _validate(model, val_set, loss_fn, n_classes)
    trainlog.append(0, dataset_loss(model, train_set, loss_fn), val_loss, val_dice, config.initial_lr)
    best_loss, best_model, since_best = val_loss, model.copy(), 0
    batch = min(config.batch_size, len(train_set))

    for epoch in range(1, config.max_epochs + 1):
        lr = lr_schedule(trainlog, config)
        epoch_losses = []
        for _ in range(config.iterations_per_epoch):
            idx = rng.choice(len(train_set), size=batch, replace=False)
            if config.augment:
                picks = rng.integers(len(transforms), size=batch)
                bf = [_transform(feats[i], *transforms[t]) for i, t in zip(idx, picks)]
                bm = [_transform(masks[i], *transforms[t]) for i, t in zip(idx, picks)]
            else:
                bf = [feats[i] for i in idx]
                bm = [masks[i] for i in idx]
            value, dlogits, cache = _batch_loss(model, bf, bm, loss_fn)
            if not np.isfinite(value):
                raise DivergenceError(epoch, lr, value)
            grads = backward(model, cache, dlogits)
            for name, p in model.params().items():
                p -= lr * grads[name]
            epoch_losses.append(value)
        val_loss, val_dice = _validate(model, val_set, loss_fn, n_classes)
        if not np.isfinite(val_loss):
            raise DivergenceError(epoch, lr, val_loss)
        trainlog.append(epoch, np.mean(epoch_losses), val_loss, val_dice, lr)
        log.debug("epoch %d loss %.5f val %.5f dice %.4f lr %g", epoch, trainlog.train_loss[-1],
                  val_loss, val_dice, lr)
        if callback is not None:
            callback(epoch, trainlog)
        if val_loss < best_loss:
            best_loss, best_model, since_best = val_loss, model.copy(), 0
        else:
            since_best += 1
            if since_best >= config.early_stop_patience:
                break
    return best_model, trainlog


class PixelSegmenter(BaseEstimator):
    """Estimator wrapper: ``fit`` on tiles and masks, ``predict`` label maps.

    ``X`` is a sequence of ``(H, W, 3)`` images in [0, 1] and ``y`` the
    matching label maps. Without ``eval_set`` the last fifth of the training
    tiles is held out for validation.
    """

    def __init__(self, loss="cc", alpha=0.25, gamma=2.0, t1=0.8, t2=1.2, learning_rate=1e-4,
                 plateau_factor=0.5, plateau_patience=20, early_stop_patience=50, max_epochs=200,
                 iterations_per_epoch=50, batch_size=5, hidden=32, augment=True, standardize=True,
                 random_state=0):
        self.loss = loss
        self.alpha = alpha
        self.gamma = gamma
        self.t1 = t1
        self.t2 = t2
        self.learning_rate = learning_rate
        self.plateau_factor = plateau_factor
        self.plateau_patience = plateau_patience
        self.early_stop_patience = early_stop_patience
        self.max_epochs = max_epochs
        self.iterations_per_epoch = iterations_per_epoch
        self.batch_size = batch_size
        self.hidden = hidden
        self.augment = augment
        self.standardize = standardize
        self.random_state = random_state

    def _config(self):
        return TrainConfig(
            loss_kind=self.loss,
            loss_params={"alpha": self.alpha, "gamma": self.gamma, "t1": self.t1, "t2": self.t2},
            initial_lr=self.learning_rate, plateau_factor=self.plateau_factor,
            plateau_patience=self.plateau_patience, early_stop_patience=self.early_stop_patience,
            max_epochs=self.max_epochs, iterations_per_epoch=self.iterations_per_epoch,
            batch_size=self.batch_size, hidden=self.hidden, augment=self.augment,
            standardize=self.standardize,
            seed=self.random_state,
        )

    def fit(self, X, y, eval_set=None, n_classes=None):
        config = self._config()
        if eval_set is None:
            if len(X) < 2:
                raise EmptyInputError("need at least two tiles to hold one out for validation")
            cut = max(1, len(X) - max(1, len(X) // 5))
            train_set, val_set = TileSet(X[:cut], y[:cut]), TileSet(X[cut:], y[cut:])
        else:
            train_set, val_set = TileSet(X, y), TileSet(*eval_set)
        self.model_, self.log_ = train(Dataset(train_set, val_set), config, n_classes)
        self.n_classes_ = self.model_.n_classes
        return self

    def predict(self, X):
        return predict_tiles(self.model_, TileSet(X, [np.zeros(np.shape(x)[:2], np.uint8) for x in X]))

    def score(self, X, y):
        return evaluate(self.model_, TileSet(X, y), self.n_classes_).mean
