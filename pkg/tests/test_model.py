import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from chronocl.model import (
    Arch, EmaState, ModelState, OptimizerState, adamw_step, bce_with_logits, cosine_lr,
    ema_update, forward, init_model, logits, loss_and_grad, per_sample_grads, sigmoid, zero_model,
)
from chronocl.stream import Batch

from conftest import random_batch, random_model


def oracle_logit(params, d, h, x):
    """Straight-line re-implementation, one hidden unit at a time."""
    total = params[d * h + 2 * h]
    for j in range(h):
        pre = params[d * h + j]
        for k in range(d):
            pre += params[j * d + k] * x[k]
        total += params[d * h + h + j] * math.tanh(pre)
    return total


def oracle_loss(params, d, h, x, y):
    out = 0.0
    for xi, yi in zip(x, y):
        p = 1.0 / (1.0 + math.exp(-oracle_logit(params, d, h, xi)))
        out -= yi * math.log(p) + (1 - yi) * math.log(1 - p)
    return out / len(y)


def fd_grad(f, p, step=1e-5):
    g = np.empty_like(p)
    for i in range(p.size):
        e = np.zeros_like(p)
        e[i] = step
        g[i] = (f(p + e) - f(p - e)) / (2 * step)
    return g


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)


def test_param_count():
    assert Arch(32, 32).n_params == 32 * 32 + 32 + 32 + 1
    assert init_model(Arch(7, 3), np.random.default_rng(0)).params.shape == (7 * 3 + 3 + 3 + 1,)


def test_zero_params_give_half():
    m = zero_model(Arch(6, 4))
    z = forward(m, np.arange(6.0))
    assert z == 0.0 and sigmoid(z) == 0.5


def test_output_bias_only():
    m = zero_model(Arch(6, 4))
    p = m.params.copy()
    p[-1] = -1.7
    assert forward(m.with_params(p), np.ones(6)) == -1.7


def test_forward_matches_oracle(rng):
    for _ in range(20):
        m = random_model(rng, 6, 5)
        x = rng.standard_normal(6)
        assert abs(forward(m, x) - oracle_logit(m.params, 6, 5, x)) < 1e-12


def test_forward_rejects_wrong_dim():
    with pytest.raises(ValueError):
        forward(zero_model(Arch(3, 2)), np.ones(4))


def test_zero_model_loss_is_ln2(rng):
    b = random_batch(rng, 16, 5)
    loss, _ = loss_and_grad(zero_model(Arch(5, 3)), b)
    assert abs(loss - math.log(2)) < 1e-15


def test_gradient_matches_finite_differences(rng):
    for _ in range(10):
        d, h = rng.integers(2, 6), rng.integers(1, 5)
        m = random_model(rng, d, h)
        b = random_batch(rng, 8, d)
        _, g = loss_and_grad(m, b)
        num = fd_grad(lambda p: oracle_loss(p, d, h, b.features, b.labels), m.params)
        assert rel_err(g, num).max() < 1e-5


def test_output_layer_gradient_closed_form(rng):
    m = random_model(rng, 4, 3)
    x = rng.standard_normal((1, 4))
    b = Batch(x, np.array([1.0]), 0)
    _, g = loss_and_grad(m, b)
    w1 = m.params[:12].reshape(3, 4)
    a = np.tanh(x[0] @ w1.T + m.params[12:15])
    r = sigmoid(logits(m, x)[0]) - 1.0
    np.testing.assert_allclose(g[15:18], r * a, rtol=1e-12)
    assert abs(g[-1] - r) < 1e-15


def test_per_sample_grads_average_to_batch_grad(rng):
    m = random_model(rng, 5, 4)
    b = random_batch(rng, 10, 5)
    _, g = loss_and_grad(m, b)
    np.testing.assert_allclose(per_sample_grads(m, b.features, b.labels).mean(0), g, atol=1e-14)


@settings(max_examples=100, deadline=None)
@given(z=arrays(np.float64, 8, elements=st.floats(-500, 500)), y=arrays(np.float64, 8, elements=st.sampled_from([0.0, 1.0])))
def test_loss_non_negative(z, y):
    loss = bce_with_logits(z, y)
    assert np.all(np.isfinite(loss)) and np.all(loss >= 0)


# -- AdamW ------------------------------------------------------------------

def test_zero_grad_zero_decay_is_identity():
    m = ModelState(np.linspace(-1, 1, 4 * 2 + 2 + 2 + 1), Arch(4, 2))
    m2, opt = adamw_step(m, OptimizerState.zeros(m.arch.n_params, weight_decay=0.0), np.zeros(m.arch.n_params))
    np.testing.assert_array_equal(m2.params, m.params)
    assert opt.step_count == 1


def test_first_step_by_hand():
    # smallest arch has 4 params; two carry gradient, two stay at zero
    arch = Arch(1, 1)
    p0 = np.array([1.0, 1.0, 0.0, 0.0])
    g = np.array([0.5, -2.0, 0.0, 0.0])
    lr, eps = 0.1, 1e-8
    m, opt = adamw_step(ModelState(p0, arch), OptimizerState.zeros(4, lr=lr, weight_decay=0.0), g)
    # m1 = 0.1 g, v1 = 0.001 g^2; bias corrected back to g and g^2
    expected = np.array([1.0 - lr * 0.5 / (0.5 + eps), 1.0 + lr * 2.0 / (2.0 + eps), 0.0, 0.0])
    np.testing.assert_allclose(m.params, expected, rtol=0, atol=1e-15)
    np.testing.assert_allclose(opt.first_moment, 0.1 * g)
    np.testing.assert_allclose(opt.second_moment, 0.001 * g * g)


def test_decoupled_weight_decay_shrinks():
    p = np.linspace(-2, 2, 4)
    m, _ = adamw_step(ModelState(p, Arch(1, 1)), OptimizerState.zeros(4, lr=0.01, weight_decay=0.1), np.zeros(4))
    np.testing.assert_allclose(m.params, p * (1 - 0.01 * 0.1), rtol=1e-15)


def test_adamw_deterministic(rng):
    m = random_model(rng)
    g = rng.standard_normal(m.arch.n_params)
    opt = OptimizerState.zeros(m.arch.n_params)
    a, b = adamw_step(m, opt, g), adamw_step(m, opt, g)
    assert a[0].params.tobytes() == b[0].params.tobytes()


def test_adamw_rejects_bad_grad(rng):
    m = random_model(rng)
    opt = OptimizerState.zeros(m.arch.n_params)
    with pytest.raises(ValueError):
        adamw_step(m, opt, np.zeros(3))
    g = np.zeros(m.arch.n_params)
    g[0] = np.nan
    with pytest.raises(FloatingPointError):
        adamw_step(m, opt, g)


# -- cosine schedule ----------------------------------------------------------

def test_cosine_endpoints():
    assert cosine_lr(0, 0.1, 100) == 0.1
    assert abs(cosine_lr(100, 0.1, 100)) < 1e-18
    assert abs(cosine_lr(50, 0.1, 100) - 0.05) < 1e-15


def test_cosine_rejects_out_of_range():
    with pytest.raises(ValueError):
        cosine_lr(101, 0.1, 100)
    with pytest.raises(ValueError):
        cosine_lr(0, 0.1, 0)


# -- EMA ----------------------------------------------------------------------

def test_ema_one_step():
    arch = Arch(1, 1)
    e = ema_update(EmaState(np.zeros(4), 0.99), ModelState(np.ones(4), arch))
    np.testing.assert_allclose(e.shadow_params, 0.01, rtol=1e-12)


def test_ema_unit_and_zero_decay():
    arch = Arch(1, 1)
    m = ModelState(np.full(4, 3.0), arch)
    frozen = EmaState(np.zeros(4), 1.0)
    assert ema_update(frozen, m).shadow_params.tobytes() == frozen.shadow_params.tobytes()
    np.testing.assert_array_equal(ema_update(EmaState(np.zeros(4), 0.0), m).shadow_params, m.params)


def test_ema_rejects_bad_decay():
    with pytest.raises(ValueError):
        EmaState(np.zeros(2), 1.5)


@settings(max_examples=100, deadline=None)
@given(decay=st.floats(0, 1), traj=st.lists(st.floats(-3, 3), min_size=1, max_size=30))
def test_ema_stays_in_hull(decay, traj):
    arch = Arch(1, 1)
    e = EmaState(np.full(4, traj[0]), decay)
    for v in traj:
        e = ema_update(e, ModelState(np.full(4, v), arch))
    lo, hi = min(traj), max(traj)
    assert np.all(e.shadow_params >= lo - 1e-12) and np.all(e.shadow_params <= hi + 1e-12)
