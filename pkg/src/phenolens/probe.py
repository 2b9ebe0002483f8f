"""Linear probe on frozen representations.

The probe minimizes class-weighted softmax cross-entropy, with weights
``n / (n_i * C)`` from the training counts, by seeded mini-batch SGD and
keeps the parameters with the best validation accuracy.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .analytics import EmbeddingSet
from .errors import (
    ClassMismatchError,
    ConfigError,
    DimensionMismatchError,
    EmptyClassError,
    InsufficientDataError,
    NumericError,
    StratificationError,
)
from .rng import SplitMix64


def class_weights(counts):
    """Per-class loss weights ``n / (n_i * C)``."""
    counts = [int(c) for c in counts]
    if not counts:
        raise EmptyClassError("no classes given")
    for i, c in enumerate(counts):
        if c < 1:
            raise EmptyClassError(f"class {i} has {c} samples")
    n, k = sum(counts), len(counts)
    return np.array([n / (c * k) for c in counts])


@dataclass
class ProbeConfig:
    epochs: int = 200
    lr: float = 0.1
    batch_size: int = 64
    momentum: float = 0.9
    patience: int = 10
    eval_interval: int = 1
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ConfigError("probe.epochs: must be a non-negative integer", "epochs")
        if not (self.lr > 0):
            raise ConfigError("probe.lr: must be positive", "lr")
        if self.batch_size < 1:
            raise ConfigError("probe.batch_size: must be >= 1", "batch_size")
        if not (0 <= self.momentum < 1):
            raise ConfigError("probe.momentum: must lie in [0, 1)", "momentum")
        if self.patience < 1:
            raise ConfigError("probe.patience: must be >= 1", "patience")
        if self.eval_interval < 1:
            raise ConfigError("probe.eval_interval: must be >= 1", "eval_interval")

    def to_dict(self):
        return asdict(self)


@dataclass
class ProbeParams:
    weights: np.ndarray  # K x D
    bias: np.ndarray  # K
    classes: list
    class_weights: np.ndarray

    @property
    def dim(self):
        return self.weights.shape[1]


@dataclass
class Metrics:
    accuracy: float
    recall: list
    confusion: np.ndarray  # row-normalized over the true class
    counts: np.ndarray  # raw K x K tallies
    support: list
    zero_support: list = field(default_factory=list)
    classes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "classes": list(self.classes),
            "recall": list(self.recall),
            "support": list(self.support),
            "zero_support": list(self.zero_support),
            "confusion": self.confusion.tolist(),
            "counts": self.counts.tolist(),
        }


def _label_index(labels, classes):
    lookup = {c: i for i, c in enumerate(classes)}
    missing = sorted(set(labels) - set(lookup))
    if missing:
        raise ClassMismatchError(f"labels without a trained class: {missing}")
    return np.array([lookup[lab] for lab in labels], dtype=np.int64)


def scores(probe, H):
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[1] != probe.dim:
        raise DimensionMismatchError(
            f"representations have dimension {H.shape[-1]}, probe expects {probe.dim}"
        )
    return H @ probe.weights.astype(np.float64).T + probe.bias.astype(np.float64)


def predict_index(probe, H):
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(scores(probe, H), axis=1)


def predict(probe, E):
    H = E.H if isinstance(E, EmbeddingSet) else E
    return [probe.classes[i] for i in predict_index(probe, H)]


def _tally(true_idx, pred_idx, k):
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (true_idx, pred_idx), 1)
    return counts


def evaluate(probe, E):
    """Accuracy, per-class recall and the row-normalized confusion matrix."""
    if len(E) == 0:
        raise InsufficientDataError("cannot evaluate on an empty set")
    E._require_labels()
    k = len(probe.classes)
    counts = _tally(_label_index(E.labels, probe.classes), predict_index(probe, E.H), k)
    support = counts.sum(axis=1)
    confusion = np.zeros((k, k))
    nz = support > 0
    confusion[nz] = counts[nz] / support[nz, None]
    recall = [float(confusion[i, i]) for i in range(k)]
    return Metrics(
        accuracy=int(np.trace(counts)) / int(support.sum()),
        recall=recall,
        confusion=confusion,
        counts=counts,
        support=support.tolist(),
        zero_support=[probe.classes[i] for i in range(k) if support[i] == 0],
        classes=list(probe.classes),
    )


def _accuracy(probe, H, y):
    return float(np.mean(predict_index(probe, H) == y))


def train_probe(train, val, cfg=None, classes=None):
    """Fit a linear probe; returns ``(ProbeParams, best validation accuracy)``.

    Validation accuracy is measured before training and then every
    ``eval_interval`` epochs; training stops once ``patience`` evaluations
    pass without strict improvement and the best parameters are returned.
    """
    cfg = cfg or ProbeConfig()
    train._require_labels()
    val._require_labels()
    if train.dim != val.dim:
        raise DimensionMismatchError(f"train dimension {train.dim} != val dimension {val.dim}")
    if classes is None:
        classes = train.classes
    classes = list(classes)
    if len(classes) < 2:
        raise ClassMismatchError("a probe needs at least 2 classes")
    absent = sorted(set(val.labels) - set(train.labels))
    if absent:
        raise ClassMismatchError(f"classes in validation but not in training: {absent}")
    y = _label_index(train.labels, classes)
    y_val = _label_index(val.labels, classes)
    counts = np.bincount(y, minlength=len(classes))
    weights = class_weights(counts)
    H = train.H.astype(np.float64)
    if not np.all(np.isfinite(H)) or not np.all(np.isfinite(val.H)):
        raise NumericError("non-finite representations")
    k, d = len(classes), train.dim

    # optimize in standardized coordinates, report an affine map on raw h
    if cfg.standardize:
        mu = H.mean(axis=0)
        sd = H.std(axis=0)
        sd[sd < 1e-12] = 1.0
    else:
        mu, sd = np.zeros(d), np.ones(d)
    X = ((H - mu) / sd).astype(np.float32)

    W = np.zeros((k, d), dtype=np.float32)
    b = np.zeros(k, dtype=np.float32)
    vW, vb = np.zeros_like(W), np.zeros_like(b)

    def to_raw(W, b):
        Wr = (W.astype(np.float64) / sd).astype(np.float32)
        br = (b.astype(np.float64) - Wr.astype(np.float64) @ mu).astype(np.float32)
        return ProbeParams(Wr, br, classes, weights)

    best = to_raw(W, b)
    best_acc = _accuracy(best, val.H, y_val)
    stale = 0
    rng = SplitMix64(cfg.seed)
    n = X.shape[0]
    sample_w = weights[y]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = X[idx].astype(np.float64)
            logits = xb @ W.astype(np.float64).T + b
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(idx.size), y[idx]] -= 1.0
            wb = sample_w[idx]
            g = p * (wb / wb.sum())[:, None]
            gW = g.T @ xb
            gb = g.sum(axis=0)
            vW = (cfg.momentum * vW + gW).astype(np.float32)
            vb = (cfg.momentum * vb + gb).astype(np.float32)
            W = (W - cfg.lr * vW.astype(np.float64)).astype(np.float32)
            b = (b - cfg.lr * vb.astype(np.float64)).astype(np.float32)
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise NumericError(f"probe diverged at epoch {epoch}; lower probe.lr")
        if epoch % cfg.eval_interval == 0:
            current = to_raw(W, b)
            acc = _accuracy(current, val.H, y_val)
            if acc > best_acc:
                best, best_acc, stale = current, acc, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    return best, best_acc


def stratified_subset(E, fraction, seed=0):
    """Seeded per-class subsample keeping ``round(fraction * n_c)`` of each class."""
    if not (0 < fraction <= 1):
        raise StratificationError(f"fraction must lie in (0, 1], got {fraction}")
    labels = np.asarray(E.labels, dtype=object)
    keep = []
    rng = SplitMix64(seed).child(f"fraction/{fraction!r}")
    for name in E.classes:
        members = np.flatnonzero(labels == name)
        n_keep = int(math.floor(fraction * members.size + 0.5))
        if n_keep < 1:
            raise StratificationError(
                f"fraction {fraction} keeps no sample of class '{name}' ({members.size} members)"
            )
        if n_keep == members.size:
            keep.extend(members.tolist())
        else:
            keep.extend(members[rng.permutation(members.size)[:n_keep]].tolist())
    return E.subset(np.sort(np.asarray(keep, dtype=np.int64)))


def label_fraction_curve(E_train, E_val, E_test, fractions, cfg=None, classes=None):
    """Test accuracy of probes trained on stratified label fractions."""
    cfg = cfg or ProbeConfig()
    fractions = [float(f) for f in fractions]
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise ConfigError("fractions must be sorted ascending without repeats", "fractions")
    if classes is None:
        classes = E_train.classes
    out = []
    for f in fractions:
        sub = stratified_subset(E_train, f, cfg.seed)
        probe, _ = train_probe(sub, E_val, cfg, classes)
        out.append({"fraction": f, "n_train": len(sub), "accuracy": evaluate(probe, E_test).accuracy})
    return out


class LinearProbe(ClassifierMixin, BaseEstimator):
    """Class-weighted softmax linear classifier with early stopping.

    ``fit`` accepts optional ``X_val``/``y_val`` for early stopping; when they
    are omitted the training set doubles as the validation set.
    """

    def __init__(
        self,
        epochs=200,
        lr=0.1,
        batch_size=64,
        momentum=0.9,
        patience=10,
        eval_interval=1,
        standardize=True,
        random_state=0,
    ):
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.momentum = momentum
        self.patience = patience
        self.eval_interval = eval_interval
        self.standardize = standardize
        self.random_state = random_state

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        if X_val is None:
            X_val, y_val = X, y
        X_val = check_array(X_val, dtype=np.float64)
        classes = list(dict.fromkeys(y.tolist()))
        cfg = ProbeConfig(
            self.epochs, self.lr, self.batch_size, self.momentum, self.patience,
            self.eval_interval, self.standardize, int(self.random_state or 0),
        )
        train = EmbeddingSet.from_arrays(X, [str(v) for v in y])
        val = EmbeddingSet.from_arrays(X_val, [str(v) for v in y_val])
        self.probe_, self.best_val_accuracy_ = train_probe(train, val, cfg, [str(c) for c in classes])
        self.classes_ = np.asarray(classes)
        self.coef_ = self.probe_.weights
        self.intercept_ = self.probe_.bias
        self.class_weight_ = self.probe_.class_weights
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "probe_")
        return scores(self.probe_, check_array(X, dtype=np.float64))

    def predict_proba(self, X):
        s = self.decision_function(X)
        s -= s.max(axis=1, keepdims=True)
        p = np.exp(s)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
