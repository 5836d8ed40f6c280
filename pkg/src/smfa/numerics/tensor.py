"""Dense float64 tensors and the primitives used for mask arithmetic.

A :class:`Tensor` is a thin immutable wrapper around a C-contiguous
float64 ndarray.  Construction validates finiteness; the wrapped array is
marked read-only so weight maps behave like values.  Heavy training code
operates on raw ndarrays and wraps results at module boundaries via
``Tensor.wrap`` / ``.data``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import NonFinite, ShapeMismatch


class Tensor:
    """Immutable dense row-major float64 array."""

    __slots__ = ("_data",)

    def __init__(self, data: np.ndarray):
        # Always own the buffer so freezing never mutates a caller's array.
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        if not np.all(np.isfinite(arr)):
            raise NonFinite("tensor holds NaN or Inf")
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def wrap(cls, data: np.ndarray) -> "Tensor":
        return cls(data)

    @property
    def data(self) -> np.ndarray:
        """Read-only ndarray view of the values."""
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def size(self) -> int:
        return self._data.size

    def tolist(self) -> list:
        return self._data.tolist()

    def __eq__(self, other) -> bool:
        """Bitwise equality: same shape and identical value bytes."""
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and self._data.tobytes() == other._data.tobytes()

    def __hash__(self):
        return hash((self.shape, self._data.tobytes()))

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)})"

    def __reduce__(self):
        # reconstruct through the constructor so the copy is frozen too
        return (Tensor, (np.asarray(self._data),))


def tensor_from(shape: Sequence[int], values: Sequence[float]) -> Tensor:
    """Build a tensor from row-major values, validating length and finiteness."""
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ShapeMismatch(f"negative dimension in shape {list(shape)}")
    expected = int(np.prod(shape)) if shape else 1
    values = list(values)
    if len(values) != expected:
        raise ShapeMismatch(
            f"shape {list(shape)} needs {expected} values, got {len(values)}"
        )
    arr = np.asarray(values, dtype=np.float64).reshape(shape)
    return Tensor(arr)


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape), dtype=np.float64))


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {list(a.shape)} vs {list(b.shape)}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return Tensor(a.data + b.data)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return Tensor(a.data - b.data)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    return Tensor(a.data * b.data)


def sign_product(a: Tensor, b: Tensor) -> Tensor:
    """Entrywise sign(a)*sign(b), in {-1, 0, 1}."""
    _require_same_shape(a, b, "sign_product")
    return Tensor(np.sign(a.data) * np.sign(b.data))


def absolute(a: Tensor) -> Tensor:
    return Tensor(np.abs(a.data))


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor(a.data * float(c))


_BINARY = {"add": add, "sub": sub, "mul": mul, "sign_product": sign_product}
_UNARY = {"abs": absolute}


def elementwise(op: str, a: Tensor, b: Tensor | None = None, c: float | None = None) -> Tensor:
    """Dispatch by op name: add/sub/mul/sign_product need b, scale needs c."""
    if op == "scale":
        if c is None:
            raise ValueError("scale requires the constant c")
        return scale(a, c)
    if op in _UNARY:
        return _UNARY[op](a)
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} requires a second tensor")
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeMismatch("matmul requires rank-2 tensors")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: inner dims {a.shape[1]} vs {b.shape[0]}")
    return Tensor(a.data @ b.data)


def frobenius_norm(a: Tensor) -> float:
    """sqrt of the sum of squared entries; 0.0 for empty tensors."""
    if a.size == 0:
        return 0.0
    return float(np.sqrt(np.sum(a.data * a.data)))
