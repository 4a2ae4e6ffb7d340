import math
import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dacalns import nn
from dacalns.errors import GraphNotRecorded, NonFiniteInput, ShapeMismatch
from dacalns.nn import ParamStore, Tensor, grad_check, optimizer_step

GC_TOL = 1e-4


def naive_matmul(a, b):
    out = np.zeros((len(a), len(b[0])))
    for i in range(len(a)):
        for j in range(len(b[0])):
            for k in range(len(b)):
                out[i, j] += a[i][k] * b[k][j]
    return out


def test_linear_identity_and_zero_input():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    out = nn.linear(x, Tensor(np.eye(3)), Tensor(np.zeros((1, 3))))
    assert np.array_equal(out.value, x.value)
    b = Tensor([[1.0, -2.0]])
    out = nn.linear(Tensor(np.zeros((4, 3))), Tensor(np.ones((3, 2))), b)
    assert np.array_equal(out.value, np.tile(b.value, (4, 1)))


def test_linear_matches_triple_loop():
    rng = np.random.default_rng(0)
    x, W, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=(1, 2))
    out = nn.linear(Tensor(x), Tensor(W), Tensor(b)).value
    assert np.allclose(out, naive_matmul(x.tolist(), W.tolist()) + b, atol=1e-12)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        nn.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeMismatch):
        nn.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))), Tensor(np.ones((1, 3))))
    with pytest.raises(ShapeMismatch):
        nn.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_softmax_examples():
    assert np.allclose(nn.softmax_array([0.0, 0.0]), [0.5, 0.5], atol=0)
    p = nn.softmax_array([1000.0, 0.0])
    assert np.isfinite(p).all() and p[0] == pytest.approx(1.0) and 0 <= p[1] < 1e-300
    with pytest.raises(NonFiniteInput):
        nn.softmax_array([np.nan, 0.0])
    with pytest.raises(NonFiniteInput):
        nn.log_softmax(Tensor([[np.inf, 0.0]]))


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_properties(z, c):
    p = nn.softmax_array(z)
    assert (p > 0).all() and abs(p.sum() - 1) < 1e-12
    assert np.allclose(p, nn.softmax_array(np.array(z) + c), atol=1e-12)
    lp = nn.log_softmax(Tensor([z])).value[0]
    assert np.allclose(np.exp(lp), p, atol=1e-12)


def test_backward_linear_structure():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 3))
    W = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    nn.sum_all(nn.matmul(Tensor(x), W)).backward()
    assert np.allclose(W.grad, np.tile(x.T, (1, 2)))


def test_zero_weight_term_contributes_nothing():
    rng = np.random.default_rng(2)
    W = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    V = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    loss = nn.sum_all(nn.square(W)) + nn.scale(nn.sum_all(nn.tanh(V)), 0.0)
    loss.backward()
    assert np.array_equal(V.grad, np.zeros((3, 3)))
    assert np.allclose(W.grad, 2 * W.value)


def test_graph_not_recorded():
    W = Tensor(np.ones((2, 2)), requires_grad=True)
    with nn.no_grad():
        loss = nn.sum_all(nn.square(W))
    assert nn.is_recording()
    with pytest.raises(GraphNotRecorded):
        loss.backward()
    with pytest.raises(GraphNotRecorded):
        nn.sum_all(Tensor(np.ones((2, 2)))).backward()


def test_shared_subexpression_accumulates():
    W = Tensor([[3.0]], requires_grad=True)
    y = W * W
    (y + y).backward()  # d/dW 2 W^2 = 4 W
    assert W.grad[0, 0] == 12.0


def _params(rng, *shapes):
    return [Tensor(rng.normal(size=s), requires_grad=True) for s in shapes]


OPS = {
    "matmul_add": lambda p, x: nn.sum_all(nn.matmul(x, p[0]) + p[1]),
    "mul_broadcast": lambda p, x: nn.sum_all(nn.square(nn.mul(nn.matmul(x, p[0]), p[1]))),
    "sub_transpose": lambda p, x: nn.sum_all(nn.square(nn.sub(nn.transpose(nn.matmul(x, p[0])), nn.transpose(p[1] * 2.0)))),
    "relu": lambda p, x: nn.sum_all(nn.square(nn.relu(nn.linear(x, p[0], p[1])))),
    "tanh": lambda p, x: nn.sum_all(nn.tanh(nn.linear(x, p[0], p[1]))),
    "exp": lambda p, x: nn.sum_all(nn.exp(nn.scale(nn.linear(x, p[0], p[1]), 0.3))),
    "concat": lambda p, x: nn.sum_all(nn.square(nn.concat([nn.matmul(x, p[0]), nn.tanh(p[1])], axis=0))),
    "max_rows": lambda p, x: nn.sum_all(nn.square(nn.max_rows(nn.linear(x, p[0], p[1])))),
    "pick": lambda p, x: nn.pick(nn.tanh(nn.linear(x, p[0], p[1])), 2, 1),
    "softmax_rows": lambda p, x: nn.sum_all(nn.square(nn.softmax(nn.linear(x, p[0], p[1]), axis=1))),
    "softmax_cols": lambda p, x: nn.pick(nn.softmax(nn.linear(x, p[0], p[1]), axis=0), 1, 0),
    "cross_entropy": lambda p, x: -nn.pick(nn.log_softmax(nn.linear(nn.max_rows(x), p[0], p[1])), 0, 1),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_grad_check_ops(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    x = Tensor(rng.normal(size=(4, 3)))
    p = _params(rng, (3, 2), (1, 2))
    assert grad_check(lambda: OPS[name](p, x), p, h=1e-5) < GC_TOL


@given(st.integers(0, 10_000))
def test_grad_check_two_layer_net(seed):
    rng = np.random.default_rng(seed)
    W1, b1, W2, b2 = _params(rng, (5, 8), (1, 8), (8, 3), (1, 3))
    x = Tensor(rng.normal(size=(1, 5)))
    y = int(rng.integers(0, 3))

    def loss():
        h = nn.tanh(nn.linear(x, W1, b1))
        return -nn.pick(nn.log_softmax(nn.linear(h, W2, b2)), 0, y)

    assert grad_check(loss, [W1, b1, W2, b2]) < GC_TOL


def test_grad_check_detects_wrong_gradient():
    W = Tensor([[0.7, -0.3]], requires_grad=True)

    def wrong_square():
        # the true derivative is 2 W; this op reports W
        return nn.sum_all(nn._make(W.value**2, (W,), lambda g: (g * W.value,)))

    assert grad_check(wrong_square, [W]) > 0.4


def _store(seed=0):
    rng = np.random.default_rng(seed)
    s = ParamStore()
    s.add("W", rng.normal(size=(3, 2)))
    s.add("b", rng.normal(size=(1, 2)))
    return s


def test_zero_gradients_leave_params():
    s = _store()
    before = {k: t.value.copy() for k, t in s}
    for _, t in s:
        t.grad = np.zeros_like(t.value)
    optimizer_step(s)
    assert all(np.array_equal(before[k], t.value) for k, t in s)
    assert s.step_count == 1 and all(t.grad is None for _, t in s)


def test_first_step_magnitude_is_lr():
    s = _store()
    before = s["W"].value.copy()
    s["W"].grad = np.full((3, 2), 0.37)
    s["b"].grad = np.full((1, 2), -5.0)
    optimizer_step(s, lr=1e-3)
    assert np.allclose(before - s["W"].value, 1e-3, rtol=1e-6)


def test_constant_gradient_descends():
    s = _store()
    start = s["W"].value.copy()
    for _ in range(200):
        s["W"].grad = np.ones((3, 2))
        s["b"].grad = -np.ones((1, 2))
        optimizer_step(s, lr=1e-2)
    assert (s["W"].value < start).all()


def test_adam_matches_hand_reference():
    s = _store(3)
    rng = np.random.default_rng(9)
    ref = {k: t.value.copy() for k, t in s}
    m = {k: np.zeros_like(v) for k, v in ref.items()}
    v = {k: np.zeros_like(x) for k, x in ref.items()}
    for t in range(1, 6):
        grads = {k: rng.normal(size=ref[k].shape) for k in ref}
        for k, tensor in s:
            tensor.grad = grads[k].copy()
        optimizer_step(s, lr=0.01)
        for k in ref:
            g = grads[k]
            m[k] = 0.9 * m[k] + 0.1 * g
            v[k] = 0.999 * v[k] + 0.001 * g * g
            mhat = m[k] / (1 - 0.9**t)
            vhat = v[k] / (1 - 0.999**t)
            ref[k] = ref[k] - 0.01 * mhat / (np.sqrt(vhat) + 1e-8)
    for k, tensor in s:
        assert np.allclose(tensor.value, ref[k], rtol=0, atol=1e-14)


def test_flat_and_partial_paths_agree():
    a, b = _store(4), _store(4)
    rng = np.random.default_rng(1)
    for _ in range(3):
        g = rng.normal(size=(3, 2))
        a["W"].grad, a["b"].grad = g.copy(), np.zeros((1, 2))
        b["W"].grad, b["b"].grad = g.copy(), None  # per-parameter branch
        optimizer_step(a)
        optimizer_step(b)
    assert np.array_equal(a["W"].value, b["W"].value)


def test_sgd_and_unknown_method():
    s = _store()
    w = s["W"].value.copy()
    s["W"].grad = np.ones((3, 2))
    optimizer_step(s, lr=0.5, method="sgd")
    assert np.allclose(s["W"].value, w - 0.5)
    with pytest.raises(ValueError):
        optimizer_step(s, method="rmsprop")


def test_store_helpers():
    s = _store()
    with pytest.raises(KeyError):
        s.add("W", np.ones(2))
    c = s.clone()
    assert c.checksum() == s.checksum() and c.names() == ["W", "b"] and s.n_values() == 8
    c["W"].value[0, 0] += 1
    assert c.checksum() != s.checksum()


def _trajectory(seed):
    s = ParamStore()
    rng = np.random.default_rng(seed)
    W = s.add("W", nn.glorot(rng, 4, 3))
    out = []
    for _ in range(20):
        x = Tensor(rng.normal(size=(2, 4)))
        nn.sum_all(nn.square(nn.tanh(nn.matmul(x, W)))).backward()
        optimizer_step(s)
        out.append(W.value.copy())
    return out


def test_determinism_bitwise():
    a, b = _trajectory(5), _trajectory(5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_glorot_bounds():
    w = nn.glorot(np.random.default_rng(0), 64, 64)
    assert np.abs(w).max() <= math.sqrt(6 / 128)


def test_numerical_hygiene_10k_steps():
    rng = np.random.default_rng(0)
    s = ParamStore()
    W1 = s.add("W1", nn.glorot(rng, 6, 16))
    b1 = s.add("b1", np.zeros((1, 16)))
    W2 = s.add("W2", nn.glorot(rng, 16, 4))
    b2 = s.add("b2", np.zeros((1, 4)))
    for step in range(10_000):
        x = Tensor(rng.normal(scale=3.0, size=(1, 6)))
        logits = nn.linear(nn.tanh(nn.linear(x, W1, b1)), W2, b2)
        if step % 2:
            loss = -nn.scale(nn.pick(nn.log_softmax(logits), 0, int(rng.integers(0, 4))), float(rng.normal(scale=5)))
        else:
            loss = nn.sum_all(nn.square(logits - float(rng.normal(scale=10))))
        loss.backward()
        optimizer_step(s, lr=1e-2)
        for _, t in s:
            assert np.isfinite(t.value).all(), step
