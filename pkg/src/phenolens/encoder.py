"""Feed-forward backbone and projection head with hand-written backprop.

Parameters are stored as float32; every matrix product and reduction is
carried out in float64 and rounded back to the storage dtype.  Passing
float64 parameters keeps the whole computation in float64, which is what
the finite-difference checks use.

Layer order (also the checkpoint layout): backbone layers first, then the
projection head.  Each layer is ``(W, b)`` with ``W`` of shape
``(fan_in, fan_out)`` so that a layer computes ``X @ W + b``.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DegenerateEmbeddingError,
    NumericError,
    ScheduleExhaustedError,
)
from .rng import as_stream

NORM_EPS = 1e-12


@dataclass
class EncoderArch:
    input_dim: int = 1024
    hidden_dims: list = field(default_factory=lambda: [256, 128])
    rep_dim: int = 64
    proj_hidden: int = 64
    proj_dim: int = 32
    activation: str = "relu"

    def __post_init__(self):
        self.hidden_dims = [int(d) for d in self.hidden_dims]
        dims = [self.input_dim, *self.hidden_dims, self.rep_dim, self.proj_dim]
        if self.proj_hidden is not None:
            dims.append(self.proj_hidden)
        if any(int(d) != d or d < 1 for d in dims):
            raise ConfigError("arch: all layer dimensions must be integers >= 1", "arch")
        if self.activation != "relu":
            raise ConfigError("arch.activation: only 'relu' is supported", "activation")

    @property
    def backbone_dims(self):
        return [self.input_dim, *self.hidden_dims, self.rep_dim]

    @property
    def head_dims(self):
        if self.proj_hidden is None:
            return [self.rep_dim, self.proj_dim]
        return [self.rep_dim, self.proj_hidden, self.proj_dim]

    @property
    def layer_shapes(self):
        b, h = self.backbone_dims, self.head_dims
        return list(zip(b[:-1], b[1:])) + list(zip(h[:-1], h[1:]))

    @property
    def n_backbone(self):
        return len(self.backbone_dims) - 1

    def n_params(self):
        return sum(i * o + o for i, o in self.layer_shapes)

    def to_dict(self):
        return asdict(self)


@dataclass
class EncoderParams:
    arch: EncoderArch
    layers: list  # [(W, b), ...] backbone then head

    @property
    def backbone(self):
        return self.layers[: self.arch.n_backbone]

    @property
    def head(self):
        return self.layers[self.arch.n_backbone :]

    @property
    def dtype(self):
        return self.layers[0][0].dtype

    def flat(self):
        """All values in checkpoint order: per layer, W row-major then b."""
        return np.concatenate([a.reshape(-1) for W, b in self.layers for a in (W, b)])

    @classmethod
    def from_flat(cls, arch, values, dtype=np.float32):
        values = np.asarray(values)
        layers, pos = [], 0
        for i, o in arch.layer_shapes:
            W = values[pos : pos + i * o].reshape(i, o).astype(dtype)
            pos += i * o
            b = values[pos : pos + o].astype(dtype)
            pos += o
            layers.append((W, b))
        if pos != values.size:
            raise ValueError(f"expected {pos} parameter values, got {values.size}")
        return cls(arch, layers)

    def copy(self):
        return EncoderParams(self.arch, [(W.copy(), b.copy()) for W, b in self.layers])

    def astype(self, dtype):
        return EncoderParams(self.arch, [(W.astype(dtype), b.astype(dtype)) for W, b in self.layers])


def init_params(arch, seed, dtype=np.float32):
    """He-normal weights (std sqrt(2/fan_in)), zero biases."""
    rng = as_stream(seed)
    layers = []
    for i, o in arch.layer_shapes:
        W = (rng.normal(i * o) * math.sqrt(2.0 / i)).reshape(i, o).astype(dtype)
        layers.append((W, np.zeros(o, dtype=dtype)))
    return EncoderParams(arch, layers)


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")


def _mlp_forward(layers, X, dtype):
    """Affine + ReLU on every layer but the last; returns output and caches."""
    acts = [X]
    pre = []
    a = X
    for idx, (W, b) in enumerate(layers):
        z = (a.astype(np.float64) @ W.astype(np.float64) + b).astype(dtype)
        pre.append(z)
        a = np.maximum(z, 0) if idx < len(layers) - 1 else z
        acts.append(a)
    return a, acts, pre


def _mlp_backward(layers, acts, pre, grad_out, dtype):
    grads = [None] * len(layers)
    g = grad_out.astype(np.float64)
    for idx in range(len(layers) - 1, -1, -1):
        W, _ = layers[idx]
        if idx < len(layers) - 1:
            g = g * (pre[idx] > 0)
        grads[idx] = (
            (acts[idx].astype(np.float64).T @ g).astype(dtype),
            g.sum(axis=0).astype(dtype),
        )
        g = g @ W.astype(np.float64).T
    return grads, g


def _as_input(params, X):
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.arch.input_dim:
        raise ValueError(f"expected input of shape (N, {params.arch.input_dim}), got {X.shape}")
    _check_finite(X, "encoder input")
    return X.astype(params.dtype)


def encode(params, X):
    """Backbone representations H (N x rep_dim)."""
    X = _as_input(params, X)
    H, _, _ = _mlp_forward(params.backbone, X, params.dtype)
    return H


def _normalize_rows(U):
    norms = np.sqrt(np.sum(U.astype(np.float64) ** 2, axis=1))
    bad = np.flatnonzero(norms < NORM_EPS)
    if bad.size:
        raise DegenerateEmbeddingError(
            f"projection row {int(bad[0])} has norm {norms[bad[0]]:.3g} < {NORM_EPS}"
        )
    return U.astype(np.float64) / norms[:, None], norms


def project(params, H):
    """Projection head output with unit-norm rows (N x proj_dim)."""
    H = np.asarray(H)
    _check_finite(H, "representations")
    U, _, _ = _mlp_forward(params.head, H.astype(params.dtype), params.dtype)
    Z, _ = _normalize_rows(U)
    return Z.astype(params.dtype)


def forward(params, X):
    """Full forward pass; returns (H, Z) and a cache for :func:`backward`."""
    X = _as_input(params, X)
    H, b_acts, b_pre = _mlp_forward(params.backbone, X, params.dtype)
    U, h_acts, h_pre = _mlp_forward(params.head, H, params.dtype)
    Z, norms = _normalize_rows(U)
    cache = (b_acts, b_pre, h_acts, h_pre, Z, norms)
    return H, Z.astype(params.dtype), cache


def backward(params, X, dZ, cache=None):
    """Exact gradients of a loss w.r.t. every (W, b), given dL/dZ."""
    dZ = np.asarray(dZ, dtype=np.float64)
    _check_finite(dZ, "upstream gradient")
    if cache is None:
        _, _, cache = forward(params, X)
    b_acts, b_pre, h_acts, h_pre, Z, norms = cache
    if dZ.shape != Z.shape:
        raise ValueError(f"upstream gradient shape {dZ.shape} != {Z.shape}")
    # through z = u / |u|
    dU = (dZ - Z * np.sum(Z * dZ, axis=1, keepdims=True)) / norms[:, None]
    head_grads, dH = _mlp_backward(params.head, h_acts, h_pre, dU, params.dtype)
    back_grads, _ = _mlp_backward(params.backbone, b_acts, b_pre, dH, params.dtype)
    return back_grads + head_grads


@dataclass
class OptimizerState:
    buffers: list
    step: int = 0
    momentum: float = 0.9
    weight_decay: float = 1e-6

    @classmethod
    def zeros_like(cls, params, momentum=0.9, weight_decay=1e-6):
        if not (0 <= momentum < 1):
            raise ConfigError("momentum must lie in [0, 1)", "momentum")
        if weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative", "weight_decay")
        buffers = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params.layers]
        return cls(buffers, 0, momentum, weight_decay)


def sgd_momentum_step(params, grads, state, lr):
    """v' = momentum*v + g + weight_decay*w;  w' = w - lr*v'."""
    beta, lam = state.momentum, state.weight_decay
    new_layers, new_bufs = [], []
    for (W, b), (gW, gb), (vW, vb) in zip(params.layers, grads, state.buffers):
        pair_w, pair_v = [], []
        for w, g, v in ((W, gW, vW), (b, gb, vb)):
            v2 = (beta * v.astype(np.float64) + g + lam * w.astype(np.float64)).astype(w.dtype)
            w2 = (w.astype(np.float64) - lr * v2.astype(np.float64)).astype(w.dtype)
            pair_w.append(w2)
            pair_v.append(v2)
        new_layers.append(tuple(pair_w))
        new_bufs.append(tuple(pair_v))
    return (
        EncoderParams(params.arch, new_layers),
        OptimizerState(new_bufs, state.step + 1, beta, lam),
    )


@dataclass
class LrSchedule:
    base_lr: float = 0.3
    batch_size: int = 128
    reference_batch: int = 256
    warmup_steps: int = 0
    total_steps: int = 1

    def __post_init__(self):
        if not (self.base_lr >= 0):
            raise ConfigError("schedule.base_lr: must be non-negative", "base_lr")
        if self.batch_size < 1 or self.reference_batch < 1:
            raise ConfigError("schedule: batch sizes must be >= 1", "batch_size")
        if self.warmup_steps < 0:
            raise ConfigError("schedule.warmup_steps: must be >= 0", "warmup_steps")
        if self.total_steps <= self.warmup_steps:
            raise ConfigError("schedule.total_steps: must exceed warmup_steps", "total_steps")

    @property
    def peak_lr(self):
        return self.base_lr * math.sqrt(self.batch_size / self.reference_batch)

    def to_dict(self):
        return asdict(self)


def lr_at(schedule, step):
    """Linear warmup to the square-root-scaled peak, then cosine decay to 0."""
    T, W = schedule.total_steps, schedule.warmup_steps
    if step < 0:
        raise ValueError("step must be non-negative")
    if step > T:
        raise ScheduleExhaustedError(f"step {step} exceeds total_steps {T}")
    peak = schedule.peak_lr
    if step < W:
        return peak * step / W
    return peak * 0.5 * (1.0 + math.cos(math.pi * (step - W) / (T - W)))
