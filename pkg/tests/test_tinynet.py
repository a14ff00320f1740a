import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_diff
from q3r.reweighting import identity_operator, operator_from_matrix, q3r_value
from q3r.tinynet import (
    Attention,
    Batch,
    DeltaDense,
    Dense,
    FactorizedDense,
    MeanPool,
    Relu,
    backward,
    evaluate,
    forward,
    loss_total_with_q3r,
    parameters,
    softmax,
)


def _fd_check(net, batch, kind, tol=1e-5):
    _, grads = backward(net, batch, kind)
    for p in parameters(net):
        def f(w, p=p):
            old = p.w
            p.w = w
            loss, _ = backward(net, batch, kind)
            p.w = old
            return loss

        fd = central_diff(f, p.w.copy(), 1e-5)
        g = grads[p.name]
        assert g.shape == p.w.shape
        mask = np.abs(fd) > 1e-8
        rel = np.abs(g[mask] - fd[mask]) / np.maximum(np.abs(fd[mask]), 1e-6)
        assert rel.size == 0 or rel.max() <= tol, p.name


def _nets(rng):
    d = 5
    yield "dense", [Dense.init("d0", 4, 6, rng), Relu(), Dense.init("d1", 6, 3, rng)], (4, 4)
    yield "factorized", [FactorizedDense.init("f0", 4, 3, 2, rng), Relu(), Dense.init("h", 3, 3, rng)], (4, 4)
    yield "delta", [DeltaDense("dd", rng.standard_normal((4, 3)), 0.1 * rng.standard_normal((4, 3))), Dense.init("h", 3, 3, rng)], (4, 4)
    yield "attention", [Attention.init("a0", d, rng), MeanPool(), Dense.init("h", d, 3, rng)], (4, 3, d)


@pytest.mark.parametrize("kind", ["ce", "mse"])
def test_gradients_every_layer_kind(kind):
    rng = np.random.default_rng(0)
    for name, net, shape in _nets(rng):
        x = rng.standard_normal(shape)
        if kind == "ce":
            y = rng.integers(0, 3, size=shape[0])
        else:
            y = rng.standard_normal((shape[0], 3))
        _fd_check(net, Batch(x, y), kind)


def test_identity_dense():
    x = np.random.default_rng(1).standard_normal((3, 4))
    pred, _ = forward([Dense("d", np.eye(4))], x)
    np.testing.assert_array_equal(pred, x)


def test_relu():
    pred, _ = forward([Relu()], np.array([[-1.0, 2.0]]))
    np.testing.assert_array_equal(pred, [[0.0, 2.0]])


def test_degenerate_attention_averages_values():
    d = 4
    x = np.random.default_rng(2).standard_normal((2, 5, d))
    attn = Attention("a", np.zeros((d, d)), np.zeros((d, d)), np.eye(d), np.eye(d))
    pred, _ = forward([attn], x)
    np.testing.assert_allclose(pred, np.repeat(x.mean(axis=1, keepdims=True), 5, axis=1), atol=1e-15)


def test_zero_weights_ce_is_log_k():
    net = [Dense("d", np.zeros((3, 5)))]
    loss, _ = backward(net, Batch(np.ones((4, 3)), [0, 1, 2, 4]), "ce")
    assert loss == pytest.approx(math.log(5), abs=1e-15)


def test_mse_perfect_prediction():
    net = [Dense("d", np.eye(2))]
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    loss, grads = backward(net, Batch(x, x), "mse")
    assert loss == 0.0
    assert all(not np.any(g) for g in grads.values())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(2, 7))
def test_softmax_simplex(seed, n, k):
    z = np.random.default_rng(seed).standard_normal((n, k)) * 30
    p = softmax(z)
    assert np.all(p >= 0)
    assert np.max(np.abs(p.sum(axis=1) - 1)) <= 1e-12


def test_factorized_matches_dense():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 4))
    x = rng.standard_normal((6, 5))
    p1, _ = forward([FactorizedDense("f", a, b)], x)
    p2, _ = forward([Dense("d", a @ b)], x)
    assert np.max(np.abs(p1 - p2)) <= 1e-12


def test_forward_deterministic():
    x = np.random.default_rng(4).standard_normal((3, 4))
    a = forward([Dense.init("d", 4, 3, np.random.default_rng(7))], x)[0]
    b = forward([Dense.init("d", 4, 3, np.random.default_rng(7))], x)[0]
    np.testing.assert_array_equal(a, b)


def test_dimension_mismatch_names_layer():
    rng = np.random.default_rng(5)
    net = [Dense.init("first", 4, 6, rng), Relu(), Dense.init("second", 5, 2, rng)]
    with pytest.raises(ValueError, match=r"layer 2 \(second\)"):
        forward(net, np.zeros((1, 4)))


def test_bad_batches():
    with pytest.raises(ValueError):
        Batch(np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(ValueError):
        Batch(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        backward([Dense("d", np.eye(2))], Batch(np.eye(2), [0, 2]), "ce")
    with pytest.raises(ValueError):
        evaluate([Dense("d", np.eye(2))], [], "ce")


def test_loss_total_with_q3r():
    rng = np.random.default_rng(6)
    net = [Dense.init("d0", 4, 5, rng), Relu(), Dense.init("h", 5, 3, rng)]
    batch = Batch(rng.standard_normal((8, 4)), rng.integers(0, 3, 8))
    plain, _ = evaluate(net, [batch], "ce")
    assert loss_total_with_q3r(net, batch, "ce", 0.0, {}) == plain
    w = net[0].W
    w.q3r_enabled = True
    ops = {w.name: identity_operator(w.shape)}
    total = loss_total_with_q3r(net, batch, "ce", 0.1, ops)
    assert total == pytest.approx(plain + 0.05 * np.sum(w.w**2), abs=1e-12)
    op = operator_from_matrix(w.w, float(np.linalg.svd(w.w, compute_uv=False)[1]))
    total = loss_total_with_q3r(net, batch, "ce", 0.3, {w.name: op})
    assert abs(total - (plain + 0.3 * q3r_value(op, w.w))) <= 1e-12
    with pytest.raises(KeyError):
        loss_total_with_q3r(net, batch, "ce", 0.3, {})
