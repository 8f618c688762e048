# -*- coding: utf-8 -*-
"""
Dense rank-4 (N, C, H, W) arrays with an optional gradient buffer.

Lower ranks are stored with leading degenerate extents, e.g. a bias is
(1, C, 1, 1).  Data is always C-contiguous so element (n, c, h, w) lives at
flat index ((n*C + c)*H + h)*W + w.
"""
from typing import Iterable, Optional, Union

import numpy as np

from progDilUNet.exceptions import ShapeError
from progDilUNet.pdu_types import elementwiseT, reduceT, shapeT

RANK = 4
DTYPE = np.float32
DTYPE_CHECK = np.float64  # finite-difference gradient checks only

_ELEMENTWISE = {"add": np.add, "sub": np.subtract, "mul": np.multiply}
_REDUCE = {"sum": np.sum, "mean": np.mean, "max": np.max}


class Shape:
    """Extents of a tensor, left padded with ones up to rank 4."""

    __slots__ = ("dims",)

    def __init__(self, dims: Iterable[int]):
        dims = tuple(int(d) for d in dims)
        if len(dims) > RANK:
            raise ShapeError(f"rank {len(dims)} > {RANK} for {dims}")
        if any(d < 1 for d in dims):
            raise ShapeError(f"all extents must be >= 1, got {dims}")
        self.dims: shapeT = (1,) * (RANK - len(dims)) + dims

    def __eq__(self, other) -> bool:
        other = other if isinstance(other, Shape) else Shape(other)
        return self.dims == other.dims

    def __hash__(self):
        return hash(self.dims)

    def __iter__(self):
        return iter(self.dims)

    def __repr__(self):
        return f"Shape{self.dims}"

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def batch_compatible(self, other: "Shape") -> bool:
        """True if the shapes only differ on the batch axis where one side is 1."""
        n1, *rest1 = self.dims
        n2, *rest2 = other.dims
        return rest1 == rest2 and (n1 == n2 or 1 in (n1, n2))


def flat_index(shape: Union[Shape, shapeT], n: int, c: int, h: int, w: int) -> int:
    """Row-major position of (n, c, h, w)."""
    N, C, H, W = Shape(shape).dims
    for i, ext in zip((n, c, h, w), (N, C, H, W)):
        if not 0 <= i < ext:
            raise ShapeError(f"index {(n, c, h, w)} out of {(N, C, H, W)}")
    return ((n * C + c) * H + h) * W + w


class Tensor:
    """Numeric buffer plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data, grad: Optional[np.ndarray] = None, dtype=None):
        arr = np.asarray(data)
        if arr.dtype.kind not in "fiu":
            raise ShapeError(f"non numeric dtype {arr.dtype}")
        arr = arr.astype(DTYPE if dtype is None else dtype, copy=False)
        shape = Shape(arr.shape if arr.ndim else (1,))
        self.data: np.ndarray = np.ascontiguousarray(arr.reshape(shape.dims))
        self.grad: Optional[np.ndarray] = None
        if grad is not None:
            self.accumulate_grad(grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape.dims}, dtype={self.data.dtype})"

    @property
    def shape(self) -> Shape:
        return Shape(self.data.shape)

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    def __len__(self):
        return self.data.size

    def at(self, n: int, c: int, h: int, w: int):
        return self.flat[flat_index(self.data.shape, n, c, h, w)]

    def put(self, n: int, c: int, h: int, w: int, value) -> None:
        """Write one element, in place."""
        self.flat[flat_index(self.data.shape, n, c, h, w)] = value

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), dtype=dtype)

    def copy(self) -> "Tensor":
        t = Tensor(self.data.copy(), dtype=self.data.dtype)
        if self.grad is not None:
            t.grad = self.grad.copy()
        return t

    def zero_grad(self) -> None:
        """Reset the gradient buffer to zeros, in place."""
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad[...] = 0

    def accumulate_grad(self, g) -> None:
        """Add g to the gradient buffer, in place."""
        g = np.asarray(g)
        if g.size != self.data.size:
            raise ShapeError(f"grad of size {g.size} for {self}")
        g = g.reshape(self.data.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g


def wrap(arr: np.ndarray) -> Tensor:
    """Tensor over a computed array, float dtypes kept as they are."""
    arr = np.asarray(arr)
    return Tensor(arr, dtype=arr.dtype if arr.dtype.kind == "f" else DTYPE)


def zeros(shape, dtype=DTYPE) -> Tensor:
    return Tensor(np.zeros(Shape(shape).dims), dtype=dtype)


def ones(shape, dtype=DTYPE) -> Tensor:
    return Tensor(np.ones(Shape(shape).dims), dtype=dtype)


def elementwise(op: elementwiseT, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: {a.shape} vs {b.shape}")
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ShapeError(f"unknown elementwise op {op}") from None
    return wrap(fn(a.data, b.data))


def reduce(op: reduceT, t: Tensor, axes: Optional[Iterable[int]] = None) -> Tensor:
    """Reduce over axes (all when None), reduced extents are kept as 1."""
    axes = tuple(range(RANK)) if axes is None else tuple(int(ax) for ax in axes)
    if any(not -RANK <= ax < RANK for ax in axes):
        raise ShapeError(f"invalid axes {axes} for rank {RANK}")
    if len({ax % RANK for ax in axes}) != len(axes):
        raise ShapeError(f"repeated axes in {axes}")
    try:
        fn = _REDUCE[op]
    except KeyError:
        raise ShapeError(f"unknown reduction {op}") from None
    return wrap(fn(t.data, axis=axes, keepdims=True))
