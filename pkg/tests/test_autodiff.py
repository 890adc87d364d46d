import math

import numpy as np
import pytest

from pointmode.autodiff import (AdamW, AdamWState, BACKWARD, EncoderLayer, NonFiniteError, ShapeError,
                                Tensor, adamw_step, backward, grad_check, stop_gradient)
from pointmode.autodiff import ops as T
from pointmode.autodiff.checks import PRIMITIVE_CASES, check_primitive


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients(name):
    worst = max(check_primitive(name, seed) for seed in range(10))
    assert worst < 1e-4


def test_matmul_scalar_case():
    out = Tensor([[3.0]]) @ Tensor([[-2.5]])
    assert out.data.tolist() == [[-7.5]]


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
        Tensor(np.zeros((2, 3))) + Tensor(np.zeros(4))


def test_softmax_rows_normalised():
    x = Tensor(np.random.default_rng(0).normal(size=(7, 11)) * 5)
    y = T.softmax(x).data
    assert np.all(y > 0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)


def test_layer_norm_statistics():
    x = Tensor(np.random.default_rng(1).normal(3.0, 4.0, size=(5, 32)))
    y = T.layer_norm(x, Tensor(np.ones(32)), Tensor(np.zeros(32))).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-9)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-6)


def test_backward_square():
    x = Tensor(3.0, requires_grad=True)
    backward(x * x)
    assert x.grad == 6.0


def test_backward_sum_softmax_is_zero():
    x = Tensor(np.random.default_rng(2).normal(size=(4, 6)), requires_grad=True)
    backward(T.softmax(x).sum())
    np.testing.assert_allclose(x.grad, 0.0, atol=1e-15)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_unreached_params_get_zero_grad():
    x, y = Tensor(2.0, requires_grad=True), Tensor(np.ones(3), requires_grad=True)
    backward(x * x, [x, y])
    assert x.grad == 4.0
    np.testing.assert_array_equal(y.grad, np.zeros(3))


def test_gradient_accumulates_through_shared_use():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = (w * 3.0).sum() + (w * w).sum()
    backward(loss)
    np.testing.assert_allclose(w.grad, 3.0 + 2 * w.data)


def test_nonfinite_raises_at_producing_op():
    with pytest.raises(NonFiniteError, match="log"):
        T.log(Tensor(np.array([1.0, 0.0])))


def test_transformer_block_gradcheck():
    rng = np.random.default_rng(7)
    layer = EncoderLayer(8, 2, rng)
    x = Tensor(rng.normal(size=(2, 5, 8)))
    w = rng.normal(size=(2, 5, 8))
    assert grad_check(lambda p: (layer(x) * w).sum(), layer.parameters()) < 1e-4
    assert grad_check(lambda z: (layer(z) * w).sum(), x) < 1e-4


def test_backward_is_bitwise_deterministic():
    def grads():
        rng = np.random.default_rng(11)
        layer = EncoderLayer(8, 2, rng)
        x = Tensor(rng.normal(size=(3, 4, 8)))
        backward((layer(x) ** 2).mean())
        return [p.grad.copy() for p in layer.parameters()]

    for a, b in zip(grads(), grads()):
        assert np.array_equal(a, b)


# -- stop_gradient -----------------------------------------------------

def test_stop_gradient_value_identity_and_zero_grad():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=5), requires_grad=True)
    y = Tensor(rng.normal(size=5), requires_grad=True)
    s = stop_gradient(x)
    assert np.array_equal(s.data, x.data)
    backward((s * y).sum(), [x, y])
    np.testing.assert_array_equal(x.grad, 0.0)
    np.testing.assert_array_equal(y.grad, x.data)


def test_stop_gradient_composes():
    x = Tensor(np.arange(3.0), requires_grad=True)
    once, twice = stop_gradient(x), stop_gradient(stop_gradient(x))
    assert np.array_equal(once.data, twice.data)
    assert not once.requires_grad and not twice.requires_grad
    backward((twice * x).sum(), [x])
    np.testing.assert_array_equal(x.grad, x.data)


# -- AdamW -------------------------------------------------------------

def test_adamw_zero_grad_zero_decay_is_identity():
    p = np.array([1.0, -2.0, 3.0])
    st = AdamWState(lr=0.1, weight_decay=0.0)
    adamw_step([p], [np.zeros(3)], st)
    np.testing.assert_array_equal(p, [1.0, -2.0, 3.0])


def test_adamw_zero_lr_is_identity():
    p = np.array([1.0, -2.0])
    adamw_step([p], [np.array([0.3, -4.0])], AdamWState(lr=0.0, weight_decay=0.1))
    np.testing.assert_array_equal(p, [1.0, -2.0])


@pytest.mark.parametrize("g", [0.37, -5.0, 1e-3])
def test_adamw_first_step_is_signed_lr(g):
    p = np.array([2.0])
    adamw_step([p], [np.array([g])], AdamWState(lr=1e-2, weight_decay=0.0, eps=1e-16))
    assert p[0] == pytest.approx(2.0 - 1e-2 * math.copysign(1.0, g), abs=1e-12)


def _adamw_recurrence(p, grads, lr, wd, b1, b2, eps):
    """Scalar AdamW, written directly from the published update rule."""
    m = v = 0.0
    trace = []
    for t, g in enumerate(grads, start=1):
        p = p - lr * wd * p
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat, vhat = m / (1 - b1 ** t), v / (1 - b2 ** t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
        trace.append(p)
    return trace


def test_adamw_matches_scripted_recurrence():
    rng = np.random.default_rng(5)
    p0 = rng.normal(size=4)
    gs = [rng.normal(size=4) for _ in range(2)]
    p = p0.copy()
    st = AdamWState(lr=5e-4, weight_decay=0.1)
    for k, g in enumerate(gs):
        adamw_step([p], [g], st)
        for i in range(4):
            ref = _adamw_recurrence(p0[i], [gg[i] for gg in gs], 5e-4, 0.1, 0.9, 0.999, 1e-8)[k]
            assert p[i] == pytest.approx(ref, rel=1e-14, abs=1e-15)
    assert st.step == 2


def test_adamw_validation_and_shapes():
    with pytest.raises(ValueError):
        AdamWState(beta1=1.0)
    with pytest.raises(ShapeError):
        adamw_step([np.zeros(3)], [np.zeros(4)], AdamWState())


def test_adamw_wrapper_trains_quadratic():
    w = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = AdamW([w], lr=0.1, weight_decay=0.0)
    for _ in range(200):
        opt.zero_grad()
        backward((w * w).sum())
        opt.step()
    assert np.abs(w.data).max() < 0.05


# -- grad_check --------------------------------------------------------

def test_grad_check_examples():
    x = Tensor(np.random.default_rng(0).normal(size=6))
    assert grad_check(lambda z: (z * z).sum(), x) < 1e-8
    const = Tensor(np.ones(3))
    assert grad_check(lambda z: (const * 2.0).sum() + (z * 0.0).sum(), x) == 0.0


def test_grad_check_detects_corrupted_rule(monkeypatch):
    monkeypatch.setitem(BACKWARD, "gelu", lambda node, g: (g,))
    assert check_primitive("gelu", 0) > 1e-2
