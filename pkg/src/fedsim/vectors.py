"""Flat-vector numerical kernel.

``ParamVector`` is the unit of all model/momentum/gradient arithmetic and of
all wire traffic: an immutable, finite, 1-D float64 array of fixed length.
Reductions use a fixed index-order accumulation (no pairwise or tree
summation) so repeated runs are bit-identical regardless of thread count.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError


class ParamVector:
    """Immutable 1-D float64 vector with a finiteness guarantee.

    Length is fixed at construction and every element is checked finite, so
    NaN/Inf never propagate silently through the optimiser arithmetic.
    """

    __slots__ = ("_data",)

    def __init__(self, data: Sequence[float] | np.ndarray):
        arr = np.array(data, dtype=np.float64, copy=True)
        if arr.ndim != 1:
            raise ShapeError(f"ParamVector must be 1-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise NumericError(f"non-finite element at index {bad}: {arr[bad]}")
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def zeros(cls, d: int) -> "ParamVector":
        return cls(np.zeros(d))

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the underlying float64 array."""
        return self._data

    def __len__(self) -> int:
        return self._data.shape[0]

    def __iter__(self):
        return iter(self._data)

    def __getitem__(self, idx):
        return self._data[idx]

    def __repr__(self) -> str:
        return f"ParamVector({np.array2string(self._data, threshold=8)})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return np.array_equal(self._data, other._data)

    def __hash__(self):
        return hash(self._data.tobytes())

    # Arithmetic used by the round engine; every result re-validates
    # finiteness through the constructor.
    def __add__(self, other: "ParamVector") -> "ParamVector":
        _check_same_length(self, other)
        return ParamVector(self._data + other._data)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        _check_same_length(self, other)
        return ParamVector(self._data - other._data)

    def __mul__(self, scalar: float) -> "ParamVector":
        return ParamVector(self._data * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "ParamVector":
        return ParamVector(-self._data)


def _check_same_length(a: ParamVector, b: ParamVector) -> None:
    if len(a) != len(b):
        raise ShapeError(f"length mismatch: {len(a)} vs {len(b)}")


def sign(v: ParamVector) -> ParamVector:
    """Elementwise sign with sign(0) = 0; output support is {-1, 0, +1}."""
    return ParamVector(np.sign(v.data))


def lerp(a: ParamVector, b: ParamVector, beta: float) -> ParamVector:
    """Elementwise ``beta * a + (1 - beta) * b`` for ``beta`` in [0, 1)."""
    _check_same_length(a, b)
    beta = float(beta)
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must be in [0, 1), got {beta}")
    return ParamVector(beta * a.data + (1.0 - beta) * b.data)


def l1_norm(v: ParamVector) -> float:
    return float(np.sum(np.abs(v.data)))


def l2_norm(v: ParamVector) -> float:
    return float(np.sqrt(np.sum(v.data * v.data)))


def mean_reduce(vs: Iterable[ParamVector]) -> ParamVector:
    """Elementwise mean with fixed index-order summation.

    The accumulation order is the iteration order of ``vs``, which makes the
    result bit-reproducible across runs and thread counts.
    """
    vs = list(vs)
    if not vs:
        raise ValueError("mean_reduce of an empty list")
    acc = np.array(vs[0].data, copy=True)
    for v in vs[1:]:
        if len(v) != acc.shape[0]:
            raise ShapeError(f"length mismatch: {acc.shape[0]} vs {len(v)}")
        acc += v.data
    acc /= len(vs)
    return ParamVector(acc)
