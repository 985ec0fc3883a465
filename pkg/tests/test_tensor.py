import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from odernn import tensor as T
from odernn.errors import DimensionError, NumericError
from odernn.tensor import Tensor


def test_matmul_examples():
    A = Tensor([[1, 2], [3, 4]])
    assert T.matmul(Tensor(np.eye(2)), A) == A
    assert T.matmul(T.zeros(2, 2), Tensor([[5, 6, 7], [8, 9, 1]])) == T.zeros(2, 3)
    assert T.matmul(A, Tensor([[5], [6]])).tolist() == [[17], [39]]


def test_matmul_vector_operand():
    assert T.matmul(Tensor([[1, 2], [3, 4]]), Tensor([1, 1])).tolist() == [3, 7]


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        T.matmul(T.zeros(2, 3), T.zeros(2, 3))


def test_elementwise_examples():
    assert T.ew("sigmoid", Tensor([0.0])).item() == 0.5
    assert T.ew("tanh", Tensor([0.0])).item() == 0.0
    assert T.ew("mul", Tensor([1, 2, 3]), Tensor([4, 5, 6])).tolist() == [4, 10, 18]
    assert T.ew("scale", Tensor([1, -2]), 3).tolist() == [3, -6]


def test_no_broadcasting():
    with pytest.raises(DimensionError):
        T.add(T.zeros(2, 2), T.zeros(2))
    with pytest.raises(DimensionError):
        T.mul(T.zeros(3), T.zeros(2))


def test_non_finite_results_raise():
    with pytest.raises(NumericError):
        T.exp(Tensor([1000.0]))
    with pytest.raises(NumericError):
        T.log(Tensor([0.0]))
    with pytest.raises(NumericError):
        Tensor([math.nan])


def test_construction_invariants():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((2, 2, 2)))
    with pytest.raises(DimensionError):
        Tensor([])
    with pytest.raises(DimensionError):
        Tensor([1, 2, 3], shape=(2, 2))
    t = Tensor([1, 2, 3, 4], shape=(2, 2))
    assert t.shape == (2, 2) and t.data == [1, 2, 3, 4]
    assert len(t.data) == math.prod(t.shape)


def test_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.array[0] = 5.0


def test_reduce_examples():
    assert T.reduce("mean", Tensor([1, 2, 3])) == 2.0
    assert T.reduce("sum", T.zeros(4)) == 0.0
    assert T.reduce("max_index", Tensor([0.1, 0.7, 0.7])) == 1


def test_reduce_empty_raises():
    with pytest.raises(DimensionError):
        T.reduce("sum", [])


small = st.floats(-10, 10, allow_nan=False)


@st.composite
def conformable(draw):
    m, k, n, p = (draw(st.integers(1, 4)) for _ in range(4))
    mk = draw(st.lists(small, min_size=m * k, max_size=m * k))
    kn = draw(st.lists(small, min_size=k * n, max_size=k * n))
    n_p = draw(st.lists(small, min_size=n * p, max_size=n * p))
    return Tensor(mk, (m, k)), Tensor(kn, (k, n)), Tensor(n_p, (n, p))


@given(conformable())
def test_matmul_associative(abc):
    a, b, c = abc
    left = T.matmul(T.matmul(a, b), c).array
    right = T.matmul(a, T.matmul(b, c)).array
    # relative to the magnitude of the summed products
    scale = np.abs(a.array) @ np.abs(b.array) @ np.abs(c.array)
    assert np.all(np.abs(left - right) <= 1e-12 * np.maximum(1.0, scale))


# Beyond |x| ~ 36 the logistic rounds to exactly 1.0 in float64.
@given(st.floats(-30, 30))
def test_sigmoid_open_interval(x):
    v = T.sigmoid(Tensor([x])).item()
    assert 0.0 < v < 1.0


@given(st.floats(-15, 15))
def test_tanh_open_interval(x):
    v = T.tanh(Tensor([x])).item()
    assert -1.0 < v < 1.0


@given(st.lists(small, min_size=1, max_size=8))
def test_ew_deterministic(xs):
    a = Tensor(xs)
    for op in ("sigmoid", "tanh"):
        assert T.ew(op, a).array.tobytes() == T.ew(op, a).array.tobytes()
    assert T.mul(a, a).array.tobytes() == T.mul(a, a).array.tobytes()
