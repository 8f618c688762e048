# -*- coding: utf-8 -*-
import numpy as np
import pytest
from hypothesis import given, strategies as st

from progDilUNet.exceptions import ShapeError
from progDilUNet.tensor import (
    DTYPE,
    Shape,
    Tensor,
    elementwise,
    flat_index,
    ones,
    reduce,
    zeros,
)


def test_zeros_small():
    t = zeros((1, 1, 2, 2))
    assert len(t) == 4
    assert (t.flat == 0).all()
    assert t.grad is None
    assert t.data.dtype == DTYPE


def test_zeros_buffer_length():
    assert zeros((2, 3, 4, 5)).flat.size == 120


@pytest.mark.parametrize("shape", [(1, 1, 1, 0), (2, -1), (0,)])
def test_zeros_rejects_empty_extent(shape):
    with pytest.raises(ShapeError):
        zeros(shape)


def test_shape_left_padding_and_rank():
    assert Shape((3, 4)).dims == (1, 1, 3, 4)
    assert Shape((3, 4)) == (1, 1, 3, 4)
    with pytest.raises(ShapeError):
        Shape((1, 1, 1, 1, 1))


def test_batch_compatibility():
    assert Shape((1, 2, 3, 3)).batch_compatible(Shape((5, 2, 3, 3)))
    assert not Shape((2, 2, 3, 3)).batch_compatible(Shape((5, 2, 3, 3)))
    assert not Shape((1, 2, 3, 3)).batch_compatible(Shape((1, 3, 3, 3)))


@given(
    dims=st.tuples(*[st.integers(1, 5)] * 4),
    data=st.data(),
)
def test_flat_index_is_row_major(dims, data):
    idx = tuple(data.draw(st.integers(0, d - 1)) for d in dims)
    assert flat_index(dims, *idx) == np.ravel_multi_index(idx, dims)


@given(
    dims=st.tuples(*[st.integers(1, 4)] * 4),
    value=st.floats(-1e6, 1e6, allow_nan=False, width=32),
    data=st.data(),
)
def test_put_then_at_roundtrip(dims, value, data):
    t = zeros(dims)
    idx = tuple(data.draw(st.integers(0, d - 1)) for d in dims)
    t.put(*idx, value)
    assert t.at(*idx) == np.float32(value)
    assert t.data[idx] == np.float32(value)
    assert np.count_nonzero(t.data) <= 1


def test_index_out_of_range():
    with pytest.raises(ShapeError):
        zeros((1, 1, 2, 2)).at(0, 0, 2, 0)


def test_elementwise_examples():
    a = Tensor(np.array([1.0, 2.0]))
    b = Tensor(np.array([3.0, 4.0]))
    assert elementwise("add", a, b).flat.tolist() == [4.0, 6.0]
    x = Tensor(np.arange(6.0).reshape(1, 1, 2, 3))
    assert (elementwise("mul", x, zeros(x.shape.dims, x.data.dtype)).flat == 0).all()
    assert (elementwise("sub", x, x).flat == 0).all()


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeError):
        elementwise("add", zeros((1, 1, 2, 2)), zeros((1, 1, 2, 3)))


def test_elementwise_does_not_mutate(rng):
    a = Tensor(rng.integers(-5, 5, (2, 4, 8, 8)).astype(float))
    b = Tensor(rng.integers(-5, 5, (2, 4, 8, 8)).astype(float))
    a0, b0 = a.data.copy(), b.data.copy()
    for op, fn in (("add", np.add), ("sub", np.subtract), ("mul", np.multiply)):
        c = elementwise(op, a, b)
        oracle = [fn(x, y) for x, y in zip(a.flat, b.flat)]
        assert c.flat.tolist() == oracle
    assert np.array_equal(a.data, a0) and np.array_equal(b.data, b0)


def test_reduce_examples():
    assert reduce("sum", ones((1, 1, 3, 3))).flat.tolist() == [9.0]
    assert reduce("mean", Tensor(np.array([2.0, 4.0]))).flat.tolist() == [3.0]
    r = reduce("max", Tensor(np.array([[1.0, 5.0, 2.0]])), axes=[3])
    assert r.shape == (1, 1, 1, 1)
    assert r.flat.tolist() == [5.0]


def test_reduce_matches_loop_oracle(rng):
    x = Tensor(rng.integers(-9, 9, (2, 4, 8, 8)).astype(np.float64))
    got = reduce("sum", x, axes=(0, 2, 3))
    assert got.shape == (1, 4, 1, 1)
    for c in range(4):
        total = 0.0
        for n in range(2):
            for h in range(8):
                for w in range(8):
                    total += x.at(n, c, h, w)
        assert got.at(0, c, 0, 0) == total


def test_reduce_invalid_axis():
    with pytest.raises(ShapeError):
        reduce("sum", ones((1, 1, 2, 2)), axes=[4])


@pytest.mark.parametrize("axes", [[2, 2], [3, -1], [0, 1, -4]])
def test_reduce_repeated_axes(axes):
    with pytest.raises(ShapeError):
        reduce("sum", ones((1, 1, 2, 2)), axes=axes)


def test_constructor_defaults_to_32_bit():
    assert Tensor(np.arange(4.0)).data.dtype == DTYPE
    assert Tensor(np.arange(4)).data.dtype == DTYPE
    assert Tensor([1, 2]).data.dtype == DTYPE
    wide = Tensor(np.arange(4.0), dtype=np.float64)
    assert wide.data.dtype == np.float64
    assert wide.copy().data.dtype == np.float64
    assert elementwise("add", wide, wide).data.dtype == np.float64
    assert reduce("sum", wide).data.dtype == np.float64
    with pytest.raises(ShapeError):
        Tensor(np.array(["a"]))


def test_grad_buffer():
    t = Tensor(np.ones((1, 1, 2, 2)))
    t.accumulate_grad(np.ones(4))
    t.accumulate_grad(np.ones((1, 1, 2, 2)))
    assert (t.grad == 2).all()
    t.zero_grad()
    assert (t.grad == 0).all()
    with pytest.raises(ShapeError):
        t.accumulate_grad(np.ones(3))
