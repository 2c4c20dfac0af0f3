import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lenlab import tensor as T
from lenlab.tensor import Tensor


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def check(f, x, tol=1e-6):
    with T.precision(np.float64):
        assert T.grad_check(f, x, h=1e-6) < tol


RNG = np.random.default_rng(0)


@pytest.mark.parametrize("op", [T.add, T.sub, T.mul, T.div])
def test_binary_ops_broadcast_gradients(op):
    a = t64(RNG.normal(size=(3, 4)))
    b = t64(RNG.uniform(1, 2, size=(4,)))
    check(lambda x: (op(x, b) * op(x, b)).sum(), a)
    check(lambda y: (op(a, y) * op(a, y)).sum(), b)


@pytest.mark.parametrize("fn", [T.exp, T.gelu, T.relu, lambda x: T.log(x * x + 1.0)])
def test_unary_gradients(fn):
    x = t64(RNG.normal(size=(5,)) + 0.1)
    check(lambda v: (fn(v) * fn(v)).sum(), x)


def test_matmul_batched_gradient():
    a = t64(RNG.normal(size=(2, 3, 4)))
    b = t64(RNG.normal(size=(2, 4, 5)))
    check(lambda x: (T.matmul(x, b) * T.matmul(x, b)).sum(), a)
    check(lambda y: (T.matmul(a, y) * T.matmul(a, y)).mean(), b)


def test_softmax_with_bias_and_mask_gradient():
    x = t64(RNG.normal(size=(2, 3, 4)))
    bias = t64(RNG.normal(size=(3, 4)))
    mask = np.tril(np.ones((3, 4), dtype=bool))
    w = t64(RNG.normal(size=(2, 3, 4)), grad=False)
    check(lambda v: (T.softmax_lastdim(v, bias, mask) * w).sum(), x)
    check(lambda b: (T.softmax_lastdim(x, b, mask) * w).sum(), bias)
    out = T.softmax_lastdim(x, bias, mask).data
    assert np.allclose(out.sum(-1), 1.0)
    assert (out[..., ~mask] == 0).all()


def test_softmax_fully_masked_row_raises():
    with pytest.raises(ValueError):
        T.softmax_lastdim(Tensor(np.zeros((2, 3))), mask=np.array([True, False])[:, None] & np.zeros((2, 3), bool))


def test_layer_norm_gradient_and_statistics():
    x = t64(RNG.normal(size=(3, 6)) * 3 + 1)
    g = t64(RNG.normal(size=(6,)))
    b = t64(RNG.normal(size=(6,)))
    w = t64(RNG.normal(size=(3, 6)), grad=False)
    check(lambda v: (T.layer_norm(v, g, b) * w).sum(), x)
    check(lambda v: (T.layer_norm(x, v, b) * w).sum(), g)
    y = T.layer_norm(x, t64(np.ones(6)), t64(np.zeros(6))).data
    assert np.allclose(y.mean(-1), 0, atol=1e-9)
    assert np.allclose(y.std(-1), 1, atol=1e-4)


def test_cross_entropy_ignores_pad_and_matches_log_softmax():
    logits = t64(RNG.normal(size=(2, 3, 5)))
    targets = np.array([[1, 2, 0], [4, 0, 0]])
    loss = T.cross_entropy(logits, targets, ignore_index=0)
    ls = T.log_softmax_lastdim(logits).data
    expected = -(ls[0, 0, 1] + ls[0, 1, 2] + ls[1, 0, 4]) / 3
    assert loss.item() == pytest.approx(expected, rel=1e-12)
    check(lambda v: T.cross_entropy(v, targets, ignore_index=0), logits)


def test_take_accumulates_repeated_rows():
    table = t64(RNG.normal(size=(4, 3)))
    idx = np.array([[0, 1, 1], [3, 1, 0]])
    check(lambda v: (T.take(v, idx) * T.take(v, idx)).sum(), table)
    table.grad = None
    T.backward(T.take(table, idx).sum())
    assert table.grad[1].tolist() == [3.0, 3.0, 3.0]
    assert table.grad[2].tolist() == [0.0, 0.0, 0.0]


def test_reshape_transpose_sum_mean_gradients():
    x = t64(RNG.normal(size=(2, 3, 4)))
    check(lambda v: (T.transpose(T.reshape(v, (6, 4)), (1, 0)) * 2.0).mean(), x)
    check(lambda v: (v.sum(axis=1, keepdims=True) * v).sum(), x)


def test_rotate_pairs_gradient_and_norm():
    x = t64(RNG.normal(size=(2, 5, 8)))
    ang = RNG.uniform(0, 6, size=(5, 4))
    cos, sin = np.cos(ang), np.sin(ang)
    w = t64(RNG.normal(size=(2, 5, 8)), grad=False)
    check(lambda v: (T.rotate_pairs(v, cos, sin) * w).sum(), x)
    y = T.rotate_pairs(x, cos, sin).data
    assert np.allclose(np.linalg.norm(y, axis=-1), np.linalg.norm(x.data, axis=-1))


def test_backward_requires_scalar_and_clears_tape():
    x = t64([1.0, 2.0])
    y = x * 3.0
    with pytest.raises(ValueError):
        T.backward(y)
    loss = y.sum()
    T.backward(loss)
    assert x.grad.tolist() == [3.0, 3.0]
    with pytest.raises(ValueError):
        T.backward(loss)


def test_no_grad_records_nothing():
    x = t64([1.0, 2.0])
    with T.no_grad():
        y = (x * x).sum()
    assert not y.requires_grad
    assert T.current_tape().nodes == []


def test_non_finite_detected():
    with pytest.raises(T.NonFiniteError):
        T.log(Tensor([0.0]))
    with pytest.raises(T.NonFiniteError):
        Tensor([np.nan])


def test_shape_errors():
    with pytest.raises(T.ShapeError):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))
    with pytest.raises(T.ShapeError):
        T.layer_norm(Tensor(np.zeros((2, 3))), Tensor(np.ones(2)), Tensor(np.zeros(3)))


def test_precision_context_sets_dtype():
    assert Tensor([1.0]).dtype == np.float32
    with T.precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.integers(0, 2**31 - 1))
def test_broadcast_add_gradient_sums_over_broadcast_axes(shape, seed):
    r = np.random.default_rng(seed)
    a = t64(r.normal(size=shape))
    b = t64(r.normal(size=(shape[-1],)))
    T.backward(T.add(a, b).sum())
    assert a.grad.shape == a.shape
    assert np.allclose(b.grad, np.prod(shape[:-1]))


def test_relative_error_floor():
    assert T.relative_error(np.array([1e-12]), np.array([2e-12])) == pytest.approx(1e-4)
    assert T.relative_error(np.array([1e-12]), np.array([2e-12]), floor=1e-6) < 1e-5
