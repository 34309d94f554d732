import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyspec.optim import AdamW, clip_global_norm, cosine_lr
from polyspec.params import ParameterStore


def _store_with(name, value, grad=None):
    store = ParameterStore()
    p = store.register(name, np.asarray(value, dtype=np.float32), "heads")
    if grad is not None:
        p.tensor.grad = np.asarray(grad, dtype=np.float32)
    return store, p


def test_adamw_zero_grad_zero_wd_is_noop():
    store, p = _store_with("w", [1.0, -2.0], grad=[0.0, 0.0])
    opt = AdamW(store, weight_decay=0.0)
    opt.step()
    np.testing.assert_array_equal(p.value, [1.0, -2.0])


def test_adamw_defaults():
    store, _ = _store_with("w", [1.0])
    opt = AdamW(store)
    assert opt.state.lr == 1e-4
    assert opt.state.betas == (0.9, 0.999)
    assert opt.state.weight_decay == 1e-4
    assert opt.state.eps == 1e-8


def test_adamw_single_step_closed_form():
    lr, b1, b2, wd, eps = 1e-4, 0.9, 0.999, 1e-4, 1e-8
    theta, g = 1.0, 1.0
    store, p = _store_with("w", [theta], grad=[g])
    AdamW(store, lr=lr, betas=(b1, b2), weight_decay=wd, eps=eps).step()
    m_hat = (1 - b1) * g / (1 - b1)
    v_hat = (1 - b2) * g * g / (1 - b2)
    want = theta - lr * m_hat / (math.sqrt(v_hat) + eps) - lr * wd * theta
    np.testing.assert_allclose(p.value, [want], rtol=1e-6)


def test_cosine_lr_endpoints_and_midpoint():
    assert cosine_lr(0, 10) == pytest.approx(1e-4)
    assert cosine_lr(10, 10) == pytest.approx(1e-5)
    assert cosine_lr(5, 10) == pytest.approx(5.5e-5)


def test_cosine_lr_rejects_zero_total():
    with pytest.raises(ValueError):
        cosine_lr(0, 0)


def test_clip_below_threshold_untouched():
    store, p = _store_with("w", [0.0, 0.0], grad=[30.0, 40.0])  # norm 50
    norm = clip_global_norm(store, max_norm=100.0)
    assert norm == pytest.approx(50.0)
    np.testing.assert_array_equal(p.tensor.grad, [30.0, 40.0])


def test_clip_scales_to_max_norm():
    store, p = _store_with("w", [0.0], grad=[200.0])
    clip_global_norm(store, max_norm=100.0)
    assert abs(np.linalg.norm(p.tensor.grad) - 100.0) < 1e-4


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8),
       st.floats(0.5, 200.0))
@settings(max_examples=50, deadline=None)
def test_clip_is_idempotent(grads, max_norm):
    store, p = _store_with("w", [0.0] * len(grads), grad=grads)
    clip_global_norm(store, max_norm=max_norm)
    once = p.tensor.grad.copy()
    clip_global_norm(store, max_norm=max_norm)
    np.testing.assert_allclose(p.tensor.grad, once, rtol=1e-6, atol=1e-12)


def test_adamw_step_counter_increases():
    store, p = _store_with("w", [1.0], grad=[0.5])
    opt = AdamW(store)
    for i in range(1, 4):
        opt.step()
        assert opt.state.step_count == i
