import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikingmoe.errors import ContractError, DimensionError
from spikingmoe.gradcheck import check_gradients
from spikingmoe.tensor import (
    SpikeTensor, Tensor, backward, concat, elementwise, index_add, iter_graph, log_softmax, matmul,
    no_grad, reduce,
)


def test_matmul_examples():
    eye = Tensor([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(matmul(eye, Tensor([[3.0], [4.0]])).data, [[3], [4]])
    np.testing.assert_array_equal(matmul(Tensor([[1.0, 2.0]]), Tensor([[0.0], [0.0]])).data, [[0]])
    np.testing.assert_array_equal(matmul(Tensor([[1.0, 2], [3, 4]]), Tensor([[5.0], [6]])).data, [[17], [39]])


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_backward_sum_gives_ones(rng):
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_square():
    x = Tensor(3.0, requires_grad=True)
    backward(x * x)
    assert x.grad == pytest.approx(6.0)


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_elementwise_examples(rng):
    x = Tensor(rng.standard_normal(5))
    np.testing.assert_array_equal(elementwise("add", x, 0.0).data, x.data)
    np.testing.assert_array_equal(elementwise("mul", x, 1.0).data, x.data)
    np.testing.assert_array_equal(elementwise("scale", Tensor([2.0, 4.0]), 0.5).data, [1, 2])
    with pytest.raises(DimensionError):
        elementwise("add", Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
    with pytest.raises(ContractError):
        elementwise("pow", x, x)


def test_mask_is_constant(rng):
    x = Tensor(rng.standard_normal(4), requires_grad=True)
    m = Tensor([1.0, 0.0, 1.0, 0.0], requires_grad=True)
    backward(elementwise("mask", x, m).sum())
    np.testing.assert_array_equal(x.grad, [1, 0, 1, 0])
    assert m.grad is None


def test_reduce_examples():
    np.testing.assert_array_equal(reduce("sum", Tensor([[1.0, 1.0], [0.0, 1.0]]), axis=-1).data, [2, 1])
    x = Tensor(np.arange(6.0).reshape(2, 1, 3), requires_grad=True)
    np.testing.assert_array_equal(reduce("mean", x, axis=1).data, x.data[:, 0])
    backward(reduce("sum", x))
    np.testing.assert_array_equal(x.grad, np.ones_like(x.data))
    with pytest.raises(DimensionError):
        reduce("sum", x, axis=3)


def test_double_backward_accumulates_twice(rng):
    x = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    y = ((x @ w) * (x @ w)).sum()
    backward(y, retain_graph=True)
    first = x.grad.copy()
    backward(y)
    np.testing.assert_allclose(x.grad, 2 * first, rtol=1e-6)


def test_tape_released_after_backward(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    y = (x * 2.0).sum()
    backward(y)
    assert y._prev == ()


def test_each_node_visited_once(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    a = x * 2.0
    y = (a + a + a).sum()  # diamond: a has three consumers
    nodes = list(iter_graph(y))
    assert len(nodes) == len({id(n) for n in nodes})
    backward(y)
    np.testing.assert_allclose(x.grad, np.full(3, 6.0))


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad and y._prev == ()


def test_broadcast_grad_is_reduce_sum(rng):
    b = Tensor(rng.standard_normal((1, 4)), requires_grad=True)
    x = Tensor(rng.standard_normal((5, 3, 4)))
    up = rng.standard_normal((5, 3, 4))
    backward(((x + b) * Tensor(up)).sum())
    np.testing.assert_allclose(b.grad, up.sum(axis=(0, 1))[None, :])


def _composite(a, b, c):
    h = (a @ b).exp() * c
    z = concat([h, a], axis=-1)
    return (log_softmax(z, axis=-1) * z).mean() + (h / (c * c + 1.0)).sum()


def test_composite_matches_finite_differences(f64, rng):
    a = Tensor(rng.standard_normal((3, 4)) * 0.5, requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)) * 0.5, requires_grad=True)
    c = Tensor(rng.standard_normal((1, 2)), requires_grad=True)
    assert check_gradients(lambda: _composite(a, b, c), [a, b, c]) < 1e-3


def test_gather_scatter_gradients(f64, rng):
    base = Tensor(rng.standard_normal((2, 5, 3)), requires_grad=True)
    src = Tensor(rng.standard_normal((2, 2, 3)), requires_grad=True)
    w = Tensor(rng.standard_normal((2, 5, 3)))

    def f():
        picked = base.take([4, 1], axis=1)
        return (index_add(base, 1, [0, 3], src * picked) * w).sum()

    assert check_gradients(f, [base, src]) < 1e-3


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_random_matmul_chain_gradients(m, k, n, seed):
    r = np.random.default_rng(seed)
    a = Tensor(r.standard_normal((m, k)), requires_grad=True, dtype=np.float64)
    b = Tensor(r.standard_normal((k, n)), requires_grad=True, dtype=np.float64)
    bias = Tensor(r.standard_normal(n), requires_grad=True, dtype=np.float64)
    f = lambda: ((a @ b + bias) * (a @ b)).mean()  # noqa: E731
    assert check_gradients(f, [a, b, bias]) < 1e-3


def test_spike_tensor_roundtrip(rng):
    bits = (rng.random((2, 1, 3, 4)) < 0.5).astype(np.float32)
    s = SpikeTensor(bits)
    v = s.to_value()
    back = SpikeTensor.from_value(v)
    np.testing.assert_array_equal(back.data, bits)
    assert isinstance(s.reshape(2, 12), SpikeTensor)
    with pytest.raises(ContractError):
        SpikeTensor(np.full((2,), 0.5))
