"""Single-hidden-layer MLP detector with hand-written backprop, AdamW and EMA.

Parameters live in one flat float64 vector laid out as
``[W1 (h*d, row-major), b1 (h), w2 (h), b2 (1)]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

ACTIVATIONS = ("tanh",)


@dataclass(frozen=True)
class Arch:
    input_dim: int
    hidden_dim: int = 32
    activation: str = "tanh"

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ValueError("input_dim and hidden_dim must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        d, h = self.input_dim, self.hidden_dim
        return d * h + h + h + 1


@dataclass(frozen=True)
class ModelState:
    params: np.ndarray
    arch: Arch

    def __post_init__(self):
        if self.params.shape != (self.arch.n_params,):
            raise ValueError(f"expected {self.arch.n_params} params, got shape {self.params.shape}")

    def with_params(self, params: np.ndarray) -> "ModelState":
        return ModelState(params, self.arch)


@dataclass(frozen=True)
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kw) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), **kw)


@dataclass(frozen=True)
class EmaState:
    shadow_params: np.ndarray
    decay: float

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError(f"decay must be in [0, 1], got {self.decay}")

    @classmethod
    def of(cls, model: ModelState, decay: float) -> "EmaState":
        return cls(model.params.copy(), decay)

    def as_model(self, arch: Arch) -> ModelState:
        return ModelState(self.shadow_params, arch)


def unpack(params: np.ndarray, arch: Arch):
    d, h = arch.input_dim, arch.hidden_dim
    w1 = params[: d * h].reshape(h, d)
    b1 = params[d * h : d * h + h]
    w2 = params[d * h + h : d * h + 2 * h]
    b2 = params[-1]
    return w1, b1, w2, b2


def init_model(arch: Arch, rng: np.random.Generator, scale: float = 1.0) -> ModelState:
    """Uniform fan-in init, the usual default for dense layers."""
    d, h = arch.input_dim, arch.hidden_dim
    b_in, b_out = scale / math.sqrt(d), scale / math.sqrt(h)
    params = np.concatenate([
        rng.uniform(-b_in, b_in, d * h),
        rng.uniform(-b_in, b_in, h),
        rng.uniform(-b_out, b_out, h),
        rng.uniform(-b_out, b_out, 1),
    ])
    return ModelState(params, arch)


def zero_model(arch: Arch) -> ModelState:
    return ModelState(np.zeros(arch.n_params), arch)


def _hidden(params: np.ndarray, arch: Arch, x: np.ndarray):
    w1, b1, w2, b2 = unpack(params, arch)
    a = np.tanh(x @ w1.T + b1)
    return a, a @ w2 + b2


def logits(model: ModelState, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    if x.shape[1] != model.arch.input_dim:
        raise ValueError(f"expected {model.arch.input_dim} features, got {x.shape[1]}")
    return _hidden(model.params, model.arch, x)[1]


def forward(model: ModelState, features: np.ndarray) -> float:
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (model.arch.input_dim,):
        raise ValueError(f"expected {model.arch.input_dim} features, got shape {features.shape}")
    return float(logits(model, features)[0])


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def bce_with_logits(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample binary cross-entropy, stable for large |z|."""
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def backprop(model: ModelState, x: np.ndarray, dlogits: np.ndarray, cache=None) -> np.ndarray:
    """Gradient of ``sum_i dlogits[i] * logit_i`` with respect to the params."""
    arch = model.arch
    _, _, w2, _ = unpack(model.params, arch)
    a = cache if cache is not None else _hidden(model.params, arch, x)[0]
    dz = np.outer(dlogits, w2) * (1.0 - a * a)
    return np.concatenate([(dz.T @ x).ravel(), dz.sum(0), a.T @ dlogits, [dlogits.sum()]])


def forward_cached(model: ModelState, x: np.ndarray):
    """(logits, hidden activations) for reuse in ``backprop``."""
    a, z = _hidden(model.params, model.arch, x)
    return z, a


def loss_and_grad(model: ModelState, batch) -> tuple[float, np.ndarray]:
    """Mean BCE over ``batch`` and its exact gradient."""
    x, y = batch.features, batch.labels
    if len(y) == 0:
        raise ValueError("empty batch")
    z, a = forward_cached(model, x)
    loss = float(bce_with_logits(z, y).mean())
    grad = backprop(model, x, (sigmoid(z) - y) / len(y), cache=a)
    return loss, grad


def per_sample_grads(model: ModelState, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """(n, n_params) matrix of per-sample BCE gradients."""
    arch = model.arch
    _, _, w2, _ = unpack(model.params, arch)
    z, a = forward_cached(model, x)
    r = sigmoid(z) - y
    dz = r[:, None] * w2[None, :] * (1.0 - a * a)
    gw1 = (dz[:, :, None] * x[:, None, :]).reshape(len(y), -1)
    return np.hstack([gw1, dz, a * r[:, None], r[:, None]])


def adamw_step(model: ModelState, opt: OptimizerState, grad: np.ndarray, lr: float | None = None):
    """Decoupled weight decay Adam update. ``lr`` overrides ``opt.lr`` for schedules."""
    if grad.shape != model.params.shape:
        raise ValueError(f"grad shape {grad.shape} != params shape {model.params.shape}")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    lr = opt.lr if lr is None else lr
    b1, b2 = opt.betas
    t = opt.step_count + 1
    m = b1 * opt.first_moment + (1.0 - b1) * grad
    v = b2 * opt.second_moment + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    p = model.params * (1.0 - lr * opt.weight_decay)
    p = p - lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    return model.with_params(p), replace(opt, first_moment=m, second_moment=v, step_count=t)


def cosine_lr(step: int, base_lr: float, t_max: int) -> float:
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    if not 0 <= step <= t_max:
        raise ValueError(f"step {step} outside [0, {t_max}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / t_max))


def ema_update(ema: EmaState, model: ModelState) -> EmaState:
    if ema.shadow_params.shape != model.params.shape:
        raise ValueError("EMA shadow and params differ in length")
    if ema.decay == 1.0:
        return ema
    if ema.decay == 0.0:
        return EmaState(model.params.copy(), 0.0)
    shadow = ema.decay * ema.shadow_params + (1.0 - ema.decay) * model.params
    return EmaState(shadow, ema.decay)
