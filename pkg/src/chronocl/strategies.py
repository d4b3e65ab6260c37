"""Continual-learning update rules for the MLP detector.

Every rule is a step function ``step(state, batch) -> state``. All of them
build one stacked forward pass over the incoming batch plus whatever memory
samples the rule replays, assemble per-logit loss derivatives, and run a
single backward pass. With their mechanisms switched off (no memory, zero
regularisation weights, unit EMA decays) they fall through to exactly the
arithmetic of ``step_naive``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import model as M
from .model import Arch, EmaState, ModelState, OptimizerState
from .stream import Batch

KINDS = ("Naive", "Replay", "EWC", "ReplayEWC", "CLSER", "CLSEREWC", "ESMER", "DERPP")
REPLAY_KINDS = {"Replay", "ReplayEWC", "CLSER", "CLSEREWC", "ESMER", "DERPP"}
EWC_KINDS = {"EWC", "ReplayEWC", "CLSEREWC"}
DUAL_KINDS = {"CLSER", "CLSEREWC", "ESMER"}


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "Naive"
    lr: float = 1e-3
    lambda_reg: float = 0.0
    buffer_capacity: int = 0  # in batches
    plastic_decay: float = 0.99
    stable_decay: float = 0.999
    esmer_beta: float = 1.0
    esmer_alpha: float = 0.9
    derpp_alpha: float = 0.0
    weight_decay: float = 0.01
    fisher_batches: int = 10

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}; expected one of {KINDS}")
        for name in ("plastic_decay", "stable_decay", "esmer_alpha"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.buffer_capacity < 0 or self.fisher_batches < 0:
            raise ValueError("capacities must be non-negative")
        if self.lambda_reg < 0 or self.derpp_alpha < 0:
            raise ValueError("regularisation weights must be non-negative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["esmer_beta"]):
            d["esmer_beta"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown strategy fields {sorted(unknown)}")
        d = dict(d)
        if "esmer_beta" in d:
            d["esmer_beta"] = float(d["esmer_beta"])
        return cls(**d)

    def disabled(self) -> "StrategyConfig":
        """Same kind with every continual-learning mechanism switched off."""
        return replace(self, lambda_reg=0.0, buffer_capacity=0, plastic_decay=1.0,
                       stable_decay=1.0, derpp_alpha=0.0, esmer_beta=math.inf)


class MemoryBuffer:
    """Fixed-capacity reservoir of (features, label, logit, insertion index)."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = capacity
        self.features = np.empty((capacity, dim))
        self.labels = np.empty(capacity)
        self.logits = np.empty(capacity)
        self.inserted = np.empty(capacity, dtype=np.int64)
        self.size = 0
        self.seen_count = 0

    def __len__(self) -> int:
        return self.size

    def insert(self, x, y, logit, rng: np.random.Generator) -> None:
        """Reservoir sampling (Algorithm R)."""
        if self.capacity == 0:
            self.seen_count += 1
            return
        if self.size < self.capacity:
            slot = self.size
            self.size += 1
        else:
            slot = int(rng.integers(0, self.seen_count + 1))
            if slot >= self.capacity:
                self.seen_count += 1
                return
        self.features[slot] = x
        self.labels[slot] = y
        self.logits[slot] = logit
        self.inserted[slot] = self.seen_count
        self.seen_count += 1

    def insert_many(self, xs, ys, zs, rng) -> None:
        for x, y, z in zip(xs, ys, zs):
            self.insert(x, y, z, rng)

    def sample(self, n: int, rng: np.random.Generator):
        """Uniform draw of up to ``n`` distinct slots: (features, labels, logits)."""
        if self.size == 0:
            raise ValueError("sampling from an empty buffer")
        k = min(n, self.size)
        idx = rng.choice(self.size, size=k, replace=False)
        return self.features[idx], self.labels[idx], self.logits[idx]

    def snapshot(self):
        s = self.size
        return self.features[:s].copy(), self.labels[:s].copy(), self.logits[:s].copy()


def buffer_insert(buf: MemoryBuffer, sample, logit: float, rng) -> MemoryBuffer:
    buf.insert(sample.features, sample.label, logit, rng)
    return buf


@dataclass
class FisherAnchor:
    anchor_params: np.ndarray
    fisher_diag: np.ndarray

    def __post_init__(self):
        if self.anchor_params.shape != self.fisher_diag.shape:
            raise ValueError("anchor and fisher lengths differ")
        if np.any(self.fisher_diag < 0):
            raise ValueError("fisher diagonal must be non-negative")

    @classmethod
    def zero(cls, model: ModelState) -> "FisherAnchor":
        return cls(model.params.copy(), np.zeros_like(model.params))


def ewc_penalty(model: ModelState, anchor: FisherAnchor) -> tuple[float, np.ndarray]:
    if model.params.shape != anchor.anchor_params.shape:
        raise ValueError("model and anchor lengths differ")
    delta = model.params - anchor.anchor_params
    return float(np.sum(anchor.fisher_diag * delta * delta)), 2.0 * anchor.fisher_diag * delta


def estimate_fisher(model: ModelState, batches: Sequence[Batch]) -> FisherAnchor:
    """Empirical diagonal Fisher: mean squared per-sample BCE gradient."""
    if not batches:
        raise ValueError("need at least one batch to estimate the Fisher diagonal")
    x = np.vstack([b.features for b in batches])
    y = np.concatenate([b.labels for b in batches])
    g = M.per_sample_grads(model, x, y)
    return FisherAnchor(model.params.copy(), np.mean(g * g, axis=0))


@dataclass
class DualMemoryState:
    plastic: EmaState
    stable: EmaState
    loss_ema: float | None = None

    def update(self, model: ModelState) -> "DualMemoryState":
        return DualMemoryState(M.ema_update(self.plastic, model), M.ema_update(self.stable, model), self.loss_ema)


@dataclass
class StrategyState:
    """Everything one learner carries between steps."""

    cfg: StrategyConfig
    model: ModelState
    opt: OptimizerState
    rng: np.random.Generator
    buffer: MemoryBuffer | None = None
    anchor: FisherAnchor | None = None
    dual: DualMemoryState | None = None
    fisher_memory: MemoryBuffer | None = None
    fisher_rng: np.random.Generator | None = None
    grad_samples: int = 0

    @property
    def eval_model(self) -> ModelState:
        if self.dual is not None:
            return self.dual.stable.as_model(self.model.arch)
        return self.model


def init_state(cfg: StrategyConfig, model: ModelState, rng: np.random.Generator, batch_size: int = 16) -> StrategyState:
    opt = OptimizerState.zeros(model.arch.n_params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    st = StrategyState(cfg, model, opt, rng)
    if cfg.kind in REPLAY_KINDS:
        st.buffer = MemoryBuffer(cfg.buffer_capacity * batch_size, model.arch.input_dim)
    if cfg.kind in EWC_KINDS:
        st.anchor = FisherAnchor.zero(model)
        st.fisher_memory = MemoryBuffer(cfg.fisher_batches * batch_size, model.arch.input_dim)
        # own stream, so the replay draws of a composite match its base rule
        st.fisher_rng = rng.spawn(1)[0]
    if cfg.kind in DUAL_KINDS:
        plastic = cfg.plastic_decay if cfg.kind != "ESMER" else 1.0
        st.dual = DualMemoryState(EmaState.of(model, plastic), EmaState.of(model, cfg.stable_decay))
    return st


# -- shared arithmetic -------------------------------------------------------

def _ce_dlogits(z, y, n):
    return (M.sigmoid(z) - y) / n


def _apply(state: StrategyState, batch: Batch, grad: np.ndarray, n_samples: int) -> StrategyState:
    cfg = state.cfg
    if state.anchor is not None and cfg.lambda_reg > 0:
        grad = grad + cfg.lambda_reg * ewc_penalty(state.model, state.anchor)[1]
    state.model, state.opt = M.adamw_step(state.model, state.opt, grad)
    state.grad_samples += n_samples
    if state.dual is not None:
        state.dual = state.dual.update(state.model)
    if state.fisher_memory is not None:
        state.fisher_memory.insert_many(batch.features, batch.labels, np.zeros(len(batch)), state.fisher_rng)
    return state


def _naive_grad(model: ModelState, batch: Batch):
    z, a = M.forward_cached(model, batch.features)
    return M.backprop(model, batch.features, _ce_dlogits(z, batch.labels, len(batch)), cache=a), z


def _remember(state: StrategyState, batch: Batch, z: np.ndarray, keep=None) -> None:
    buf = state.buffer
    if buf is None or buf.capacity == 0:
        return
    xs, ys, zs = batch.features, batch.labels, z
    if keep is not None:
        xs, ys, zs = xs[keep], ys[keep], zs[keep]
    buf.insert_many(xs, ys, zs, state.rng)


def _replay_batch(state: StrategyState, n: int):
    buf = state.buffer
    if buf is None or len(buf) == 0:
        return None
    return buf.sample(n, state.rng)


# -- step functions ----------------------------------------------------------

def step_naive(state: StrategyState, batch: Batch) -> StrategyState:
    grad, _ = _naive_grad(state.model, batch)
    return _apply(state, batch, grad, len(batch))


def step_replay(state: StrategyState, batch: Batch) -> StrategyState:
    mem = _replay_batch(state, len(batch))
    if mem is None:
        grad, z = _naive_grad(state.model, batch)
        n = len(batch)
    else:
        x = np.vstack([batch.features, mem[0]])
        y = np.concatenate([batch.labels, mem[1]])
        zz, a = M.forward_cached(state.model, x)
        grad = M.backprop(state.model, x, _ce_dlogits(zz, y, len(y)), cache=a)
        z, n = zz[: len(batch)], len(y)
    state = _apply(state, batch, grad, n)
    _remember(state, batch, z)
    return state


def step_ewc(state: StrategyState, batch: Batch) -> StrategyState:
    # the penalty gradient is added in _apply for every kind carrying an anchor
    return step_naive(state, batch)


def consolidate(state: StrategyState) -> StrategyState:
    """Re-anchor EWC at the current params, Fisher taken over the reservoir of past samples."""
    mem = state.fisher_memory
    if state.anchor is None or mem is None or len(mem) == 0:
        return state
    x, y, _ = mem.snapshot()
    state.anchor = estimate_fisher(state.model, [Batch(x, y, -1)])
    state.grad_samples += len(y)
    return state


def step_derpp(state: StrategyState, batch: Batch) -> StrategyState:
    cfg = state.cfg
    buf = state.buffer
    n = len(batch)
    if buf is None or len(buf) == 0 or (cfg.derpp_alpha == 0 and cfg.lambda_reg == 0):
        grad, z = _naive_grad(state.model, batch)
        used = n
    else:
        xa, _, za_old = buf.sample(n, state.rng)
        xb, yb, _ = buf.sample(n, state.rng)
        x = np.vstack([batch.features, xa, xb])
        zz, a = M.forward_cached(state.model, x)
        na, nb = len(xa), len(xb)
        z, za, zb = zz[:n], zz[n : n + na], zz[n + na :]
        d = np.concatenate([
            _ce_dlogits(z, batch.labels, n),
            2.0 * cfg.derpp_alpha * (za - za_old) / na,
            cfg.lambda_reg * _ce_dlogits(zb, yb, nb),
        ])
        grad = M.backprop(state.model, x, d, cache=a)
        used = len(x)
    state = _apply(state, batch, grad, used)
    _remember(state, batch, z)
    return state


def derpp_loss(model: ModelState, batch: Batch, mem_a, mem_b, alpha: float, lam: float) -> float:
    """Scalar DER++ objective, used to check its gradient numerically."""
    ce = M.bce_with_logits(M.logits(model, batch.features), batch.labels).mean()
    xa, _, za_old = mem_a
    mse = np.mean((M.logits(model, xa) - za_old) ** 2)
    xb, yb, _ = mem_b
    ce_b = M.bce_with_logits(M.logits(model, xb), yb).mean()
    return float(ce + alpha * mse + lam * ce_b)


def _consistency_grad_terms(state: StrategyState, batch: Batch, mem):
    """Stacked inputs and logit derivatives for CE on batch+memory plus
    ``lambda_reg`` * MSE between working and stable logits on memory."""
    cfg = state.cfg
    x = np.vstack([batch.features, mem[0]])
    y = np.concatenate([batch.labels, mem[1]])
    zz, a = M.forward_cached(state.model, x)
    d = _ce_dlogits(zz, y, len(y))
    if cfg.lambda_reg > 0:
        nm = len(mem[1])
        target = M.logits(state.dual.stable.as_model(state.model.arch), mem[0])
        d[len(batch):] += 2.0 * cfg.lambda_reg * (zz[len(batch):] - target) / nm
    return x, zz, a, d


def step_clser(state: StrategyState, batch: Batch) -> StrategyState:
    mem = _replay_batch(state, len(batch))
    if mem is None:
        grad, z = _naive_grad(state.model, batch)
        n = len(batch)
    else:
        x, zz, a, d = _consistency_grad_terms(state, batch, mem)
        grad = M.backprop(state.model, x, d, cache=a)
        z, n = zz[: len(batch)], len(x)
    state = _apply(state, batch, grad, n)
    _remember(state, batch, z)
    return state


def esmer_weights(losses: np.ndarray, loss_ema: float | None, beta: float):
    """Hard error-sensitivity gate: 1 for samples at or under beta * loss_ema, else 0.

    Returns None when every sample passes (the ungated arithmetic is used).
    """
    if loss_ema is None or math.isinf(beta):
        return None
    keep = losses <= beta * loss_ema
    if keep.all():
        return None
    return keep.astype(np.float64)


def step_esmer(state: StrategyState, batch: Batch) -> StrategyState:
    cfg = state.cfg
    n = len(batch)
    mem = _replay_batch(state, n)
    model = state.model
    if mem is None:
        x, y = batch.features, batch.labels
        zz, a = M.forward_cached(model, x)
        d = _ce_dlogits(zz, y, n)
    else:
        x, zz, a, d = _consistency_grad_terms(state, batch, mem)
    z = zz[:n]
    losses = M.bce_with_logits(z, batch.labels)
    w = esmer_weights(losses, state.dual.loss_ema, cfg.esmer_beta)
    if w is not None:
        d[:n] *= w
    grad = M.backprop(model, x, d, cache=a)
    mean_loss = float(losses.mean())
    dual = state.dual
    loss_ema = mean_loss if dual.loss_ema is None else cfg.esmer_alpha * dual.loss_ema + (1 - cfg.esmer_alpha) * mean_loss
    state = _apply(state, batch, grad, len(x))
    state.dual.loss_ema = loss_ema
    _remember(state, batch, z, keep=None if w is None else w > 0)
    return state


STEP = {
    "Naive": step_naive,
    "Replay": step_replay,
    "EWC": step_ewc,
    "ReplayEWC": step_replay,
    "CLSER": step_clser,
    "CLSEREWC": step_clser,
    "ESMER": step_esmer,
    "DERPP": step_derpp,
}


def step(state: StrategyState, batch: Batch) -> StrategyState:
    return STEP[state.cfg.kind](state, batch)


def step_composite(state: StrategyState, batch: Batch) -> StrategyState:
    """Replay+EWC or CLS-ER+EWC: the base rule plus the EWC penalty gradient."""
    if state.cfg.kind not in ("ReplayEWC", "CLSEREWC"):
        raise ValueError(f"{state.cfg.kind} is not a composite strategy")
    return STEP[state.cfg.kind](state, batch)


# -- default hyperparameters -------------------------------------------------

# Values as published for vision backbones: (lr, buffer batches, lambda); None = not stated.
PUBLISHED_HPARAMS = {
    50: {
        "Naive": (1e-5, None, None), "Replay": (1e-5, 10, 10.0), "CLSEREWC": (1e-5, 50, 0.5),
        "ReplayEWC": (1e-5, 50, 10.0), "EWC": (1e-5, None, 0.1), "DERPP": (1e-5, 50, None),
        "ESMER": (1e-4, 50, 0.5), "CLSER": (1e-4, 50, 10.0),
    },
    20: {
        "Naive": (1e-3, None, None), "Replay": (1e-5, 50, 1.0), "CLSEREWC": (1e-5, 100, 10.0),
        "ReplayEWC": (1e-5, 50, 10.0), "EWC": (1e-5, None, None), "DERPP": (1e-5, 50, 0.5),
        "ESMER": (1e-4, 100, None), "CLSER": (1e-4, 100, 10.0),
    },
    10: {
        "Naive": (1e-5, None, None), "Replay": (1e-4, 100, None), "CLSEREWC": (1e-4, 100, None),
        "ReplayEWC": (1e-4, 100, None), "EWC": (1e-5, None, None), "DERPP": (1e-5, 100, None),
        "ESMER": (1e-4, 100, None), "CLSER": (1e-4, 100, None),
    },
}
PUBLISHED_DECAYS = {"ESMER": (1.0, 0.99), "CLSER": (0.99, 0.999), "CLSEREWC": (0.99, 0.999)}
