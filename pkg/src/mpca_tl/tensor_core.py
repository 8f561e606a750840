"""Third-order tensor container and the mode-2 operations MPCA is built on.

A ``Tensor3`` with dims ``(i1, i2, i3)`` stores its values slice-major: the
backing array has shape ``(i3, i1, i2)`` in C order, so each slice (one image)
is a contiguous ``i1 x i2`` block. Matrices are plain 2-D float64 arrays.

Mode-2 vectors are the length-``i2`` rows of each slice. ``unfold_mode2``
places the vector at ``(row r, slice k)`` in column ``q = k * i1 + r``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when array dimensions are incompatible with an operation."""


@dataclass(frozen=True)
class Tensor3:
    data: np.ndarray  # shape (i3, i1, i2)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="C", copy=True)
        object.__setattr__(self, "data", _validated(arr))

    @classmethod
    def _adopt(cls, arr: np.ndarray) -> "Tensor3":
        # takes ownership of a freshly built array without copying it
        t = object.__new__(cls)
        object.__setattr__(t, "data", _validated(np.ascontiguousarray(arr, dtype=np.float64)))
        return t

    @classmethod
    def from_dims(cls, values, dims: tuple[int, int, int]) -> "Tensor3":
        """Build from a flat value sequence in the documented slice-major order."""
        i1, i2, i3 = dims
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size != i1 * i2 * i3:
            raise ShapeError(f"{values.size} values do not fill dims {dims}")
        return cls(values.reshape(i3, i1, i2))

    @property
    def i1(self) -> int:
        return self.data.shape[1]

    @property
    def i2(self) -> int:
        return self.data.shape[2]

    @property
    def i3(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.i1, self.i2, self.i3)

    @property
    def values(self) -> np.ndarray:
        return self.data.ravel()

    def __getitem__(self, idx):
        r, c, k = idx
        return self.data[k, r, c]

    def __eq__(self, other):
        if not isinstance(other, Tensor3):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    __hash__ = None


def _validated(arr: np.ndarray) -> np.ndarray:
    if arr.ndim != 3:
        raise ShapeError(f"expected a 3-d array, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"all dims must be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor values must be finite")
    arr.setflags(write=False)
    return arr


def unfold_mode2(t: Tensor3) -> np.ndarray:
    return t.data.reshape(t.i3 * t.i1, t.i2).T.copy()


def fold_mode2(m: np.ndarray, dims: tuple[int, int, int]) -> Tensor3:
    i1, i2, i3 = dims
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (i2, i1 * i3):
        raise ShapeError(f"matrix {m.shape} cannot fold to dims {dims}; need {(i2, i1 * i3)}")
    return Tensor3(m.T.reshape(i3, i1, i2))


def mode2_product(t: Tensor3, b_transpose: np.ndarray) -> Tensor3:
    """Replace every mode-2 vector ``v`` by ``b_transpose @ v``."""
    b_transpose = np.asarray(b_transpose, dtype=np.float64)
    if b_transpose.ndim != 2 or b_transpose.shape[1] != t.i2:
        raise ShapeError(
            f"projection of shape {b_transpose.shape} does not accept mode-2 vectors of length {t.i2}"
        )
    return Tensor3._adopt(t.data @ b_transpose.T)


def slice_(t: Tensor3, k: int) -> np.ndarray:
    if not 0 <= k < t.i3:
        raise IndexError(f"slice index {k} out of range for {t.i3} slices")
    return t.data[k].copy()


def stack(slices: Sequence[np.ndarray]) -> Tensor3:
    if len(slices) == 0:
        raise ShapeError("cannot stack an empty list of slices")
    shape = np.shape(slices[0])
    for s in slices:
        if np.ndim(s) != 2 or np.shape(s) != shape:
            raise ShapeError(f"heterogeneous slice dims: {np.shape(s)} vs {shape}")
    return Tensor3._adopt(np.stack([np.asarray(s, dtype=np.float64) for s in slices]))


def concat(a: Tensor3, b: Tensor3) -> Tensor3:
    """Join along mode 3, slices of ``a`` first."""
    if a.i1 != b.i1 or a.i2 != b.i2:
        raise ShapeError(f"cannot concatenate dims {a.dims} and {b.dims}")
    return Tensor3._adopt(np.concatenate([a.data, b.data], axis=0))
