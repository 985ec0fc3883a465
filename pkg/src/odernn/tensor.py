"""Dense float64 tensors of rank 1 or 2.

A :class:`Tensor` is an immutable wrapper around a read-only numpy array.
There is no broadcasting: every binary elementwise op requires equal shapes,
and every result is checked for NaN/Inf.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import DimensionError, NumericError

__all__ = [
    "Tensor",
    "tensor",
    "zeros",
    "ones",
    "matmul",
    "ew",
    "add",
    "sub",
    "mul",
    "scale",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "reshape",
    "reduce",
    "sum_",
    "mean",
    "max_index",
]


def _check_finite(a: np.ndarray, what: str) -> None:
    # One reduction is cheaper than an elementwise mask; a non-finite sum of
    # finite values (overflow) falls through to the exact check.
    with np.errstate(over="ignore", invalid="ignore"):
        total = a.sum()
    if not math.isfinite(total) and not np.isfinite(a).all():
        raise NumericError(f"non-finite value produced by {what}")


class Tensor:
    """Immutable row-major float64 array with rank 1 or 2."""

    __slots__ = ("_a",)

    def __init__(self, data, shape: Sequence[int] | None = None):
        a = np.array(data, dtype=np.float64)
        if shape is not None:
            shape = tuple(int(s) for s in shape)
            if a.size != math.prod(shape):
                raise DimensionError(
                    f"{a.size} values do not fill shape {shape}")
            a = a.reshape(shape)
        if a.ndim not in (1, 2):
            raise DimensionError(f"rank must be 1 or 2, got {a.ndim}")
        if 0 in a.shape:
            raise DimensionError(f"extents must be >= 1, got {a.shape}")
        _check_finite(a, "construction")
        a.flags.writeable = False
        self._a = a

    @classmethod
    def _wrap(cls, a: np.ndarray, what: str = "operation") -> "Tensor":
        # Internal fast path: `a` is a freshly computed float64 array.
        _check_finite(a, what)
        t = cls.__new__(cls)
        a.flags.writeable = False
        t._a = a
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self._a.shape

    @property
    def rank(self) -> int:
        return self._a.ndim

    @property
    def size(self) -> int:
        return self._a.size

    @property
    def array(self) -> np.ndarray:
        """Read-only numpy view of the values."""
        return self._a

    @property
    def data(self) -> list[float]:
        """Flat row-major list of the values."""
        return self._a.ravel().tolist()

    def tolist(self):
        return self._a.tolist()

    def item(self) -> float:
        if self._a.size != 1:
            raise DimensionError(f"item() needs a single element, shape {self.shape}")
        return float(self._a.ravel()[0])

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._a, other._a))

    def __hash__(self):
        return hash((self.shape, self._a.tobytes()))

    def __repr__(self):
        return f"Tensor({self._a.tolist()!r})"

    # Operator sugar for plain (untaped) arithmetic.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def tensor(data, shape: Sequence[int] | None = None) -> Tensor:
    return data if isinstance(data, Tensor) and shape is None else Tensor(data, shape)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape))


def ones(*shape: int) -> Tensor:
    return Tensor(np.ones(shape))


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; rank-1 operands act as vectors (``W @ x``).

    A rank-1 left operand is treated as a row vector and a rank-1 right
    operand as a column vector, so results keep rank <= 2.
    """
    if a.rank == 1 and b.rank == 1:
        raise DimensionError("matmul of two vectors is ambiguous; reshape one")
    k_a = a.shape[-1]
    k_b = b.shape[0]
    if k_a != k_b:
        raise DimensionError(f"matmul: inner extents {a.shape} x {b.shape}")
    return Tensor._wrap(a._a @ b._a, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return Tensor._wrap(a._a + b._a, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return Tensor._wrap(a._a - b._a, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return Tensor._wrap(a._a * b._a, "mul")


def scale(a: Tensor, k: float) -> Tensor:
    return Tensor._wrap(a._a * float(k), "scale")


def sigmoid(a: Tensor) -> Tensor:
    return Tensor._wrap(expit(a._a), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    return Tensor._wrap(np.tanh(a._a), "tanh")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        return Tensor._wrap(np.exp(a._a), "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        return Tensor._wrap(np.log(a._a), "log")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != a.size:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}")
    if len(shape) not in (1, 2):
        raise DimensionError(f"rank must be 1 or 2, got {len(shape)}")
    return Tensor._wrap(a._a.reshape(shape).copy(), "reshape")


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "exp": exp, "log": log}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def ew(op: str, *args) -> Tensor:
    """Elementwise dispatcher: ``ew("mul", a, b)``, ``ew("scale", a, 2.0)``."""
    if op in _UNARY:
        (a,) = args
        return _UNARY[op](a)
    if op in _BINARY:
        a, b = args
        return _BINARY[op](a, b)
    if op == "scale":
        a, k = args
        return scale(a, k)
    raise ValueError(f"unknown elementwise op {op!r}")


def sum_(t: Tensor) -> float:
    return float(t._a.sum())


def mean(t: Tensor) -> float:
    return float(t._a.mean())


def max_index(t: Tensor) -> int:
    # np.argmax returns the first maximal position.
    return int(np.argmax(t._a.ravel()))


def reduce(op: str, t) -> float | int:
    if not isinstance(t, Tensor):
        t = _from_iterable(t)
    if op == "sum":
        return sum_(t)
    if op == "mean":
        return mean(t)
    if op == "max_index":
        return max_index(t)
    raise ValueError(f"unknown reduction {op!r}")


def _from_iterable(values: Iterable[float]) -> Tensor:
    vals = list(values)
    if not vals:
        raise DimensionError("reduction over an empty tensor")
    return Tensor(vals)
