import numpy as np
import pytest

from polyspec.autodiff import Tensor, concat, precision, stack
from polyspec.gradcheck import grad_check
from polyspec.ops import (cross_entropy, gelu, l1_loss, layer_norm,
                          log_softmax, logsumexp, mse_loss, relu,
                          scaled_dot_attention, softmax)
from polyspec.params import ParameterStore, linear_init
from polyspec.rng import RngStream


def test_backward_requires_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (t * 2.0).backward()


def test_linear_loss_grad_equals_input():
    x = np.array([1.0, -2.0, 3.0])
    w = Tensor(np.array([0.5, 0.5, 0.5]), requires_grad=True)
    loss = (w * Tensor(x)).sum()
    loss.backward()
    np.testing.assert_allclose(w.grad, x, rtol=1e-6)


def test_unreachable_parameter_gets_no_grad():
    w = Tensor(np.ones(2), requires_grad=True)
    u = Tensor(np.ones(2), requires_grad=True)
    (w.sum() * 1.0).backward()
    assert u.grad is None


def test_grad_accumulates_over_reuse():
    w = Tensor(np.array([2.0]), requires_grad=True)
    loss = (w * w).sum()  # d/dw w^2 = 2w
    loss.backward()
    np.testing.assert_allclose(w.grad, [4.0])


def _mlp_loss(store, x, y):
    h = Tensor(x) @ store["w1"].tensor + store["b1"].tensor
    h = relu(h)
    out = h @ store["w2"].tensor + store["b2"].tensor
    return mse_loss(out, Tensor(y))


def test_two_layer_mlp_matches_finite_differences():
    with precision(np.float64):
        rng = RngStream(11)
        store = ParameterStore()
        w1, b1 = linear_init(rng.split("l1"), 6, 5)
        w2, b2 = linear_init(rng.split("l2"), 5, 3)
        store.register("w1", w1, "heads")
        store.register("b1", b1, "heads")
        store.register("w2", w2, "heads")
        store.register("b2", b2, "heads")
        x = rng.uniform((4, 6), -1, 1)
        y = rng.uniform((4, 3), -1, 1)
        err = grad_check(lambda: _mlp_loss(store, x, y), store, h=1e-4,
                         samples_per_param=6, rng=rng.split("coords"))
    assert err < 1e-4


@pytest.mark.parametrize("make_loss", [
    lambda x: softmax(x).sum(axis=-1).mean() + (softmax(x) * softmax(x)).sum(),
    lambda x: log_softmax(x).mean(),
    lambda x: logsumexp(x).sum(),
    lambda x: gelu(x).sum(),
    lambda x: layer_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5))).abs().sum(),
    lambda x: (x ** 3.0).mean(),
    lambda x: x.clamp(-0.5, 0.5).sum(),
    lambda x: x.exp().log().sum(),
    lambda x: x.reshape(-1).sum(),
    lambda x: x.swapaxes(0, 1).mean(axis=0).sum(),
    lambda x: concat([x, x * 2.0], axis=0).sum(),
    lambda x: stack([x, x * x], axis=0).mean(),
    lambda x: x[np.array([0, 2, 2])].sum(),
    lambda x: scaled_dot_attention(x[None], x[None] * 0.5, x[None] + 1.0).sum(),
])
def test_primitive_grads_vs_finite_differences(make_loss):
    with precision(np.float64):
        rng = RngStream(21)
        store = ParameterStore()
        store.register("x", rng.uniform((3, 5), -1.2, 1.2), "heads")
        err = grad_check(lambda: make_loss(store["x"].tensor), store, h=1e-5,
                         samples_per_param=8, rng=rng.split("coords"))
    assert err < 1e-4


def test_cross_entropy_grad():
    with precision(np.float64):
        rng = RngStream(23)
        store = ParameterStore()
        store.register("logits", rng.uniform((4, 7), -1, 1), "heads")
        ids = np.array([0, 3, 6, 1])
        err = grad_check(lambda: cross_entropy(store["logits"].tensor, ids),
                         store, h=1e-5, samples_per_param=10,
                         rng=rng.split("coords"))
    assert err < 1e-4


def test_l1_loss_grad_away_from_kink():
    with precision(np.float64):
        store = ParameterStore()
        store.register("p", np.array([1.0, -2.0, 0.5]), "heads")
        target = np.array([0.0, 0.0, 0.0])
        err = grad_check(lambda: l1_loss(store["p"].tensor, Tensor(target)),
                         store, h=1e-6, samples_per_param=3)
    assert err < 1e-4


def test_grad_check_quadratic():
    with precision(np.float64):
        store = ParameterStore()
        store.register("theta", np.ones(4), "heads")
        err = grad_check(lambda: (store["theta"].tensor ** 2.0).sum(), store, h=1e-4)
    assert err < 1e-8


def test_grad_check_constant_function():
    with precision(np.float64):
        store = ParameterStore()
        store.register("theta", np.ones(3), "heads")
        err = grad_check(lambda: store["theta"].tensor.detach().sum() * 0.0 + Tensor(1.0) * Tensor(1.0),
                         store, h=1e-4)
    assert err == 0.0


def test_detach_blocks_gradient():
    w = Tensor(np.array([3.0]), requires_grad=True)
    loss = (w.detach() * w).sum()
    loss.backward()
    np.testing.assert_allclose(w.grad, [3.0])
