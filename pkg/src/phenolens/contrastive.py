"""NT-Xent objective and the self-supervised training loop."""

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import AugmentPolicy, make_views
from .encoder import (
    EncoderArch,
    LrSchedule,
    OptimizerState,
    backward,
    encode,
    forward,
    init_params,
    lr_at,
    project,
    sgd_momentum_step,
)
from .errors import ConfigError, DegenerateEmbeddingError, NormalizationError, NumericError
from .rng import SplitMix64

logger = logging.getLogger(__name__)

UNIT_TOL = 1e-5


def _check_pairs(Z, temperature):
    if not (temperature > 0):
        raise ConfigError(f"temperature must be positive, got {temperature}", "temperature")
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 2 or Z.shape[0] % 2:
        raise ValueError(f"expected an even number (>= 2) of rows, got shape {Z.shape}")
    norms = np.sqrt(np.sum(Z * Z, axis=1))
    off = np.flatnonzero(np.abs(norms - 1.0) > UNIT_TOL)
    if off.size:
        raise NormalizationError(f"row {int(off[0])} has norm {norms[off[0]]:.8f}, expected 1")
    return Z


def _softmax_terms(Z, temperature):
    n = Z.shape[0]
    S = (Z @ Z.T) / temperature
    np.fill_diagonal(S, -np.inf)
    S_max = S.max(axis=1, keepdims=True)
    E = np.exp(S - S_max)
    denom = E.sum(axis=1, keepdims=True)
    partner = np.arange(n) ^ 1
    log_prob = S[np.arange(n), partner] - (S_max[:, 0] + np.log(denom[:, 0]))
    return E / denom, partner, log_prob


def nt_xent_loss(Z, temperature=0.1):
    """Mean NT-Xent loss; rows ``2i`` and ``2i+1`` are positive pairs."""
    Z = _check_pairs(Z, temperature)
    _, _, log_prob = _softmax_terms(Z, temperature)
    return max(0.0, float(-np.mean(log_prob)))


def nt_xent_grad(Z, temperature=0.1):
    """Gradient of :func:`nt_xent_loss` with respect to each row of Z."""
    return nt_xent_loss_and_grad(Z, temperature)[1]


def nt_xent_loss_and_grad(Z, temperature=0.1):
    # dL/dS[a, b] = (softmax_a(b) - [b is a's partner]) / n, S = Z Z^T / t
    Z = _check_pairs(Z, temperature)
    n = Z.shape[0]
    P, partner, log_prob = _softmax_terms(Z, temperature)
    G = P.copy()
    G[np.arange(n), partner] -= 1.0
    return max(0.0, float(-np.mean(log_prob))), (G + G.T) @ Z / (n * temperature)


@dataclass
class ContrastiveConfig:
    temperature: float = 0.1
    batch_size: int = 128
    epochs: int = 50
    base_lr: float = 0.3
    reference_batch: int = 256
    warmup_epochs: int = 5
    momentum: float = 0.9
    weight_decay: float = 1e-6
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.augment, dict):
            self.augment = AugmentPolicy(**self.augment)
        if not (self.temperature > 0):
            raise ConfigError("ssl.temperature: must be positive", "temperature")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError("ssl.batch_size: must be an integer >= 1", "batch_size")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ConfigError("ssl.epochs: must be a non-negative integer", "epochs")
        if self.warmup_epochs < 0:
            raise ConfigError("ssl.warmup_epochs: must be non-negative", "warmup_epochs")
        if not (self.base_lr >= 0):
            raise ConfigError("ssl.base_lr: must be non-negative", "base_lr")

    def schedule(self, steps_per_epoch):
        total = max(1, self.epochs * steps_per_epoch)
        warmup = min(self.warmup_epochs * steps_per_epoch, total - 1)
        return LrSchedule(self.base_lr, self.batch_size, self.reference_batch, warmup, total)

    def to_dict(self):
        d = asdict(self)
        d["augment"] = self.augment.to_dict()
        return d


@dataclass
class TrainLog:
    epoch_loss: list = field(default_factory=list)
    lr_trace: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _as_images(dataset):
    if isinstance(dataset, np.ndarray):
        images = dataset
        if images.ndim == 2:
            side = math.isqrt(images.shape[1])
            if side * side != images.shape[1]:
                raise ValueError("flattened images must have a square pixel count")
            images = images.reshape(-1, side, side)
        return [np.asarray(im, dtype=np.float64) for im in images]
    return [np.asarray(getattr(s, "image", s), dtype=np.float64) for s in dataset]


def train_ssl(cfg, dataset, arch=None):
    """Contrastive pretraining; returns (EncoderParams, TrainLog).

    Each step draws ``batch_size`` images (the last incomplete batch of an
    epoch is dropped), builds two views per image, and takes one SGD step on
    the NT-Xent loss of their projections.
    """
    images = _as_images(dataset)
    if not images:
        raise ValueError("train_ssl needs a non-empty dataset")
    side = images[0].shape[0]
    if arch is None:
        arch = EncoderArch(input_dim=side * side)
    if arch.input_dim != side * side:
        raise ConfigError(
            f"arch.input_dim {arch.input_dim} does not match {side}x{side} images", "input_dim"
        )
    params = init_params(arch, cfg.seed)
    log = TrainLog()
    if cfg.epochs == 0:
        return params, log

    n = len(images)
    batch = min(cfg.batch_size, n)
    steps_per_epoch = n // batch
    schedule = cfg.schedule(steps_per_epoch)
    state = OptimizerState.zeros_like(params, cfg.momentum, cfg.weight_decay)
    root = SplitMix64(cfg.seed)
    shuffle_rng = root.child("shuffle")
    view_rng = root.child("views")
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        losses = []
        for k in range(steps_per_epoch):
            idx = order[k * batch : (k + 1) * batch]
            rows = []
            for i in idx:
                v1, v2 = make_views(images[i], cfg.augment, view_rng)
                rows.append(v1.reshape(-1))
                rows.append(v2.reshape(-1))
            X = np.asarray(rows, dtype=np.float32)
            try:
                _, Z, cache = forward(params, X)
            except DegenerateEmbeddingError as exc:
                raise DegenerateEmbeddingError(
                    f"epoch {epoch}, step {step}: {exc}"
                ) from exc
            loss, dZ = nt_xent_loss_and_grad(Z, cfg.temperature)
            if not math.isfinite(loss):
                raise NumericError(f"epoch {epoch}, step {step}: non-finite loss")
            grads = backward(params, X, dZ, cache)
            lr = lr_at(schedule, step)
            params, state = sgd_momentum_step(params, grads, state, lr)
            losses.append(loss)
            log.lr_trace.append(lr)
            step += 1
        log.epoch_loss.append(float(math.fsum(losses) / len(losses)))
        log.epoch_seconds.append(time.perf_counter() - t0)
        if epoch % 10 == 0 or epoch == cfg.epochs - 1:
            logger.info("ssl epoch %d loss %.5f", epoch, log.epoch_loss[-1])
        else:
            logger.debug("ssl epoch %d loss %.5f", epoch, log.epoch_loss[-1])
    return params, log


class ContrastiveEncoder(TransformerMixin, BaseEstimator):
    """Self-supervised MLP encoder; ``transform`` returns backbone representations.

    Parameters
    ----------
    hidden_dims : tuple of int
        Backbone hidden layer widths.
    rep_dim : int
        Representation dimension D (the output of ``transform``).
    proj_hidden, proj_dim : int
        Projection head widths; ``proj_hidden=None`` gives a single-layer head.
    temperature, batch_size, epochs, base_lr, warmup_epochs, momentum, weight_decay
        Training hyperparameters, see :class:`ContrastiveConfig`.
    augment : AugmentPolicy or dict, optional
        View augmentation policy; ``None`` uses the default policy.
    random_state : int
        Seed for initialization, shuffling and augmentation.

    Attributes
    ----------
    params_ : EncoderParams
    log_ : TrainLog
    image_size_ : int
    """

    def __init__(
        self,
        hidden_dims=(256, 128),
        rep_dim=64,
        proj_hidden=64,
        proj_dim=32,
        temperature=0.1,
        batch_size=128,
        epochs=50,
        base_lr=0.3,
        warmup_epochs=5,
        momentum=0.9,
        weight_decay=1e-6,
        augment=None,
        random_state=0,
    ):
        self.hidden_dims = hidden_dims
        self.rep_dim = rep_dim
        self.proj_hidden = proj_hidden
        self.proj_dim = proj_dim
        self.temperature = temperature
        self.batch_size = batch_size
        self.epochs = epochs
        self.base_lr = base_lr
        self.warmup_epochs = warmup_epochs
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.augment = augment
        self.random_state = random_state

    def _config(self):
        augment = self.augment
        if augment is None:
            augment = AugmentPolicy()
        return ContrastiveConfig(
            temperature=self.temperature,
            batch_size=self.batch_size,
            epochs=self.epochs,
            base_lr=self.base_lr,
            warmup_epochs=self.warmup_epochs,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            augment=augment,
            seed=int(self.random_state or 0),
        )

    def _validate_images(self, X, reset):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 3:
            X = X.reshape(X.shape[0], -1)
        X = check_array(X, dtype=np.float64)
        if reset:
            side = math.isqrt(X.shape[1])
            if side * side != X.shape[1]:
                raise ValueError("images must be square (pixel count a perfect square)")
            self.image_size_ = side
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but the encoder expects {self.n_features_in_}"
            )
        return X

    def fit(self, X, y=None):
        """Pretrain on images of shape (N, S, S) or (N, S*S); labels are ignored."""
        X = self._validate_images(X, reset=True)
        arch = EncoderArch(
            input_dim=X.shape[1],
            hidden_dims=list(self.hidden_dims),
            rep_dim=self.rep_dim,
            proj_hidden=self.proj_hidden,
            proj_dim=self.proj_dim,
        )
        self.params_, self.log_ = train_ssl(self._config(), X, arch)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = self._validate_images(X, reset=False)
        return encode(self.params_, X).astype(np.float64)

    def project(self, X):
        """Unit-norm projection-head outputs used by the contrastive loss."""
        check_is_fitted(self, "params_")
        X = self._validate_images(X, reset=False)
        return project(self.params_, encode(self.params_, X)).astype(np.float64)
