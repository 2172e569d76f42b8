"""Dense tensors and balanced ANOVA decompositions.

Everything downstream operates on fully observed K-way arrays (one
observation per cell).  A DenseTensor pairs the mode sizes with a flat
value vector in mode-1-fastest order, the same layout the on-disk
format uses, so ``values.reshape(dims, order="F")`` recovers the array.

Centering a mode means applying I - (1/p) 11' along that axis.  The
sweeps commute, so "doubly centered" is well defined for any K, and the
residual after centering every mode depends on the data only through
the top interaction block plus noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

__all__ = [
    "DenseTensor",
    "AnovaDecomposition",
    "center_residuals",
    "anova_decompose",
    "sample_moments",
]


def as_array(data) -> np.ndarray:
    """Coerce a DenseTensor or array-like to a float ndarray."""
    if isinstance(data, DenseTensor):
        return data.array
    return np.asarray(data, dtype=float)


@dataclass(frozen=True)
class DenseTensor:
    """Fully observed K-way array with an explicit flat layout.

    Parameters
    ----------
    dims : tuple of int
        One size per mode, each >= 1.
    values : ndarray
        Flat values, length prod(dims), mode-1 index moving fastest.
    """

    dims: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        values = np.asarray(self.values, dtype=float).ravel()
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"dims must be positive, got {dims}")
        if values.size != math.prod(dims):
            raise ValueError(
                f"value count {values.size} does not match dims {dims}"
            )
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, array) -> "DenseTensor":
        array = np.asarray(array, dtype=float)
        return cls(array.shape, array.ravel(order="F"))

    @property
    def array(self) -> np.ndarray:
        # column-major reshape puts the mode-1 index fastest
        return self.values.reshape(self.dims, order="F")

    @property
    def n_modes(self) -> int:
        return len(self.dims)

    @property
    def n_cells(self) -> int:
        return self.values.size


def _check_modes(shape) -> None:
    if any(d < 2 for d in shape):
        raise ValueError(
            f"degenerate mode: every mode size must be >= 2, got {tuple(shape)}"
        )


def center_residuals(data) -> DenseTensor:
    """Sweep the mean out of every mode.

    The result is the doubly centered residual: the projection of the
    data onto the space orthogonal to the grand mean and every
    lower-order effect.  Mode order does not matter and the operation is
    idempotent.  Requires every mode size >= 2; a size-1 mode would be
    annihilated entirely.
    """
    arr = as_array(data)
    _check_modes(arr.shape)
    out = arr
    for axis in range(out.ndim):
        out = out - out.mean(axis=axis, keepdims=True)
    return DenseTensor.from_array(out)


def _embed(block: np.ndarray, modes: tuple[int, ...], ndim: int) -> np.ndarray:
    """Reshape an effect block for broadcasting over the full array.

    ``modes`` holds the 1-based mode numbers the block spans, in
    increasing order, matching the block's axes.
    """
    shape = [1] * ndim
    block = np.asarray(block)
    for axis, mode in enumerate(modes):
        shape[mode - 1] = block.shape[axis]
    return block.reshape(shape)


@dataclass(frozen=True)
class AnovaDecomposition:
    """Effect blocks keyed by mode subset.

    Keys are sorted tuples of 1-based mode numbers: ``()`` is the grand
    mean (a 0-d array), ``(k,)`` the mode-k main effect, and the full
    tuple the top interaction block.  Blocks produced by
    :func:`anova_decompose` sum to zero along every one of their own
    modes; blocks coming out of the penalized solver need not.

    ``residual`` is the data minus the sum of all blocks.  It is zero
    (to rounding) for an exact decomposition and equals the data minus
    the fitted means for a penalized fit.
    """

    dims: tuple[int, ...]
    effects: dict[tuple[int, ...], np.ndarray]
    residual: DenseTensor

    @property
    def n_modes(self) -> int:
        return len(self.dims)

    @property
    def grand_mean(self) -> float:
        return float(self.effects[()])

    @property
    def top_key(self) -> tuple[int, ...]:
        return tuple(range(1, self.n_modes + 1))

    def interaction(self) -> np.ndarray:
        """The full interaction block, shaped like the data."""
        return self.effects[self.top_key]

    def lower_order_sum(self) -> np.ndarray:
        """Broadcast sum of every block except the full interaction."""
        total = np.zeros(self.dims)
        for modes, block in self.effects.items():
            if modes == self.top_key:
                continue
            total = total + _embed(block, modes, self.n_modes)
        return total

    def reassemble(self) -> DenseTensor:
        """Sum of all effect blocks (the fitted means)."""
        total = self.lower_order_sum() + self.effects[self.top_key]
        return DenseTensor.from_array(total)


def anova_decompose(data) -> AnovaDecomposition:
    """Exact balanced ANOVA decomposition of a K-way array.

    For each subset S of modes the effect block is the data averaged
    over the modes outside S, then centered along every mode inside S.
    The blocks are mutually orthogonal, each sums to zero along every
    one of its own modes, and they add back up to the data exactly.
    """
    arr = as_array(data)
    _check_modes(arr.shape)
    ndim = arr.ndim
    effects: dict[tuple[int, ...], np.ndarray] = {}
    for order in range(ndim + 1):
        for modes in combinations(range(1, ndim + 1), order):
            drop = tuple(ax for ax in range(ndim) if ax + 1 not in modes)
            block = arr.mean(axis=drop) if drop else arr
            for axis in range(block.ndim):
                block = block - block.mean(axis=axis, keepdims=True)
            effects[modes] = np.asarray(block, dtype=float)
    fitted = sum(_embed(b, m, ndim) for m, b in effects.items())
    residual = DenseTensor.from_array(arr - fitted)
    return AnovaDecomposition(tuple(arr.shape), effects, residual)


def sample_moments(data) -> tuple[float, float]:
    """Mean square and mean fourth power over all cells."""
    flat = as_array(data).ravel()
    sq = flat * flat
    return float(sq.mean()), float((sq * sq).mean())
