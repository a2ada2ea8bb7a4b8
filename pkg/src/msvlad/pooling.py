"""Multi-scale stride-1 max pooling and column-feature extraction.

A feature map is pooled with 2x2 and/or 3x3 windows at stride 1; every
spatial location of a pooled map then contributes one "column": the vector
of its channel activations. Columns from the 2x2 scale come first, then
the 3x3 scale. Ties inside a window resolve to the first cell in row-major
scan order, which keeps the backward routing deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionError, DomainError
from .tensor_io import FeatureMap

KERNELS = (2, 3)


class PoolingMode(Enum):
    TWO = "2x2"
    THREE = "3x3"
    BOTH = "both"

    @classmethod
    def parse(cls, text: str) -> "PoolingMode":
        for mode in cls:
            if mode.value == text:
                return mode
        raise DomainError(f"unknown pooling mode '{text}', expected one of "
                          f"{[m.value for m in cls]}")

    def kernels(self) -> tuple[int, ...]:
        if self is PoolingMode.TWO:
            return (2,)
        if self is PoolingMode.THREE:
            return (3,)
        return KERNELS


def column_count(mode: PoolingMode, height: int, width: int) -> int:
    """Number of columns a map of the given size yields under a mode."""
    return sum((height - k + 1) * (width - k + 1) for k in mode.kernels())


@dataclass(frozen=True)
class ColumnFeatureSet:
    """N x D matrix of column features plus per-row window provenance.

    Provenance rows are (kernel, grid_y, grid_x); kernel 1 marks columns
    taken straight from an unpooled map.
    """

    values: np.ndarray
    provenance: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        prov = np.asarray(self.provenance, dtype=np.int64)
        if vals.ndim != 2 or vals.shape[0] < 1:
            raise DimensionError(f"columns must be a non-empty N x D matrix, got {vals.shape}")
        if prov.shape != (vals.shape[0], 3):
            raise DimensionError(f"provenance must be {(vals.shape[0], 3)}, got {prov.shape}")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "provenance", prov)

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def _window_stack(values: np.ndarray, kernel: int) -> np.ndarray:
    """Stack the kernel*kernel shifted views, row-major over (dy, dx)."""
    h, w, _ = values.shape
    oh, ow = h - kernel + 1, w - kernel + 1
    return np.stack(
        [values[dy:dy + oh, dx:dx + ow, :] for dy in range(kernel) for dx in range(kernel)]
    )


def max_pool(fmap: FeatureMap, kernel: int) -> FeatureMap:
    """Stride-1 max pool with a kernel x kernel window."""
    if kernel not in KERNELS:
        raise DomainError(f"kernel must be one of {KERNELS}, got {kernel}")
    if fmap.height < kernel or fmap.width < kernel:
        raise DimensionError(
            f"map {fmap.height}x{fmap.width} is smaller than a {kernel}x{kernel} window"
        )
    return FeatureMap(_window_stack(fmap.values, kernel).max(axis=0))


def extract_columns(fmap: FeatureMap, kernel: int = 1) -> ColumnFeatureSet:
    """One column per spatial location, in row-major scan order."""
    h, w, c = fmap.values.shape
    grid_y, grid_x = np.divmod(np.arange(h * w), w)
    prov = np.stack([np.full(h * w, kernel), grid_y, grid_x], axis=1)
    return ColumnFeatureSet(fmap.values.reshape(h * w, c).copy(), prov)


def multiscale_columns(fmap: FeatureMap, mode: PoolingMode) -> ColumnFeatureSet:
    """Pool at every kernel of the mode and concatenate the column sets."""
    blocks = [extract_columns(max_pool(fmap, k), kernel=k) for k in mode.kernels()]
    return ColumnFeatureSet(
        np.concatenate([b.values for b in blocks]),
        np.concatenate([b.provenance for b in blocks]),
    )


def multiscale_backward(
    fmap: FeatureMap, grad_columns: np.ndarray, mode: PoolingMode
) -> np.ndarray:
    """Route column gradients back onto the argmax cell of each window.

    Returns an H x W x C gradient array shaped like the input map. The
    argmax provenance is recomputed from the map, which is exact because
    ties resolve deterministically.
    """
    h, w, c = fmap.values.shape
    grads = np.asarray(grad_columns, dtype=np.float64)
    expected = column_count(mode, h, w)
    if grads.shape != (expected, c):
        raise DimensionError(
            f"gradient must be {(expected, c)} for mode {mode.value} on an "
            f"{h}x{w}x{c} map, got {grads.shape}"
        )
    out = np.zeros((h, w, c))
    offset = 0
    for k in mode.kernels():
        oh, ow = h - k + 1, w - k + 1
        block = grads[offset:offset + oh * ow].reshape(oh, ow, c)
        offset += oh * ow
        # First-occurrence argmax over the row-major (dy, dx) stack.
        winner = np.argmax(_window_stack(fmap.values, k), axis=0)
        dy, dx = np.divmod(winner, k)
        yy = np.arange(oh)[:, None, None] + dy
        xx = np.arange(ow)[None, :, None] + dx
        cc = np.broadcast_to(np.arange(c), (oh, ow, c))
        np.add.at(out, (yy, xx, cc), block)
    return out
