"""Reference estimators of the cell means.

All of these start from the same split of the data into an additive
part and the doubly centered residual R.  The additive estimator keeps
only the additive part; the unrestricted maximum likelihood estimator
keeps everything; the low-rank estimator adds back a truncated SVD of
R; the minimax estimators add back a soft-thresholded R with either the
universal threshold sigma * sqrt(2 log(cells)) or the threshold
minimizing Stein's unbiased risk estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensors import DenseTensor, as_array, center_residuals

__all__ = [
    "BaselineSpec",
    "estimate_additive",
    "estimate_mle",
    "estimate_low_rank",
    "estimate_minimax",
    "apply_baseline",
    "mad_scale",
    "sure_threshold",
]


def _validated(data) -> np.ndarray:
    arr = as_array(data)
    if arr.ndim < 2:
        raise ValueError("need at least two modes")
    if not np.isfinite(arr).all():
        raise ValueError("non-finite values in input")
    return arr


def estimate_additive(data) -> DenseTensor:
    """Strictly additive fit: the data minus the doubly centered residual."""
    arr = _validated(data)
    return DenseTensor.from_array(arr - center_residuals(arr).array)


def estimate_mle(data) -> DenseTensor:
    """Unrestricted cell-means estimate: the data themselves."""
    return DenseTensor.from_array(_validated(data))


def estimate_low_rank(data, rank: int) -> DenseTensor:
    """Additive fit plus the top ``rank`` singular triplets of the residual.

    Matrix-only.  The residual has rank at most min(n - 1, p - 1), so
    that rank reproduces the data exactly.
    """
    arr = _validated(data)
    if arr.ndim != 2:
        raise ValueError("low-rank estimator is matrix-only")
    n, p = arr.shape
    max_rank = min(n - 1, p - 1)
    if not 0 <= rank <= max_rank:
        raise ValueError(
            f"rank must be between 0 and {max_rank} for shape {(n, p)}, got {rank}"
        )
    resid = center_residuals(arr).array
    u, s, vt = np.linalg.svd(resid, full_matrices=False)
    kept = (u[:, :rank] * s[:rank]) @ vt[:rank]
    return DenseTensor.from_array(arr - resid + kept)


def mad_scale(values) -> float:
    """Robust noise scale: median absolute deviation over 0.6745."""
    flat = np.asarray(values, dtype=float).ravel()
    return float(np.median(np.abs(flat - np.median(flat))) / 0.6745)


def sure_threshold(values, sigma: float) -> float:
    """Soft-threshold level minimizing Stein's unbiased risk estimate.

    The risk estimate is piecewise smooth with knots at the absolute
    data values, so scanning {0} plus those values is an exact
    minimization.  Ties go to the smallest threshold.
    """
    flat = np.abs(np.asarray(values, dtype=float).ravel())
    if flat.size == 0:
        raise ValueError("empty input")
    s = np.sort(flat)
    count = s.size
    prefix = np.concatenate(([0.0], np.cumsum(s * s)))
    cand = np.concatenate(([0.0], s))
    below = np.searchsorted(s, cand, side="right")
    risk = (
        count * sigma**2
        - 2.0 * sigma**2 * below
        + prefix[below]
        + (count - below) * cand * cand
    )
    return float(cand[int(np.argmin(risk))])


def estimate_minimax(data, variant: str = "universal", noise_scale="mad") -> DenseTensor:
    """Additive fit plus a soft-thresholded residual.

    ``variant`` is "universal" (sigma * sqrt(2 log(cells))) or "sure".
    ``noise_scale`` is either the string "mad" for the robust default or
    a known noise standard deviation.
    """
    arr = _validated(data)
    if arr.ndim != 2:
        raise ValueError("minimax estimator is matrix-only")
    resid = center_residuals(arr).array
    if isinstance(noise_scale, str):
        if noise_scale != "mad":
            raise ValueError(f"unknown noise scale {noise_scale!r}")
        sigma = mad_scale(resid)
    else:
        sigma = float(noise_scale)
        if sigma < 0.0:
            raise ValueError(f"noise scale must be nonnegative, got {sigma}")
    if variant == "universal":
        threshold = sigma * math.sqrt(2.0 * math.log(arr.size))
    elif variant == "sure":
        threshold = sure_threshold(resid, sigma)
    else:
        raise ValueError(f"unknown minimax variant {variant!r}")
    kept = np.sign(resid) * np.maximum(np.abs(resid) - threshold, 0.0)
    return DenseTensor.from_array(arr - resid + kept)


@dataclass(frozen=True)
class BaselineSpec:
    """Named baseline configuration for studies and the CLI.

    kind is one of "additive", "mle", "low_rank", "minimax";
    ``rank`` applies to low_rank, ``variant`` and ``noise_scale`` to
    minimax.
    """

    kind: str
    rank: int | None = None
    variant: str = "universal"
    noise_scale: float | str = "mad"

    def label(self) -> str:
        if self.kind == "low_rank":
            return f"low_rank_{self.rank}"
        if self.kind == "minimax":
            return f"minimax_{self.variant}"
        return self.kind


def apply_baseline(data, spec: BaselineSpec) -> DenseTensor:
    """Evaluate one baseline estimator."""
    if spec.kind == "additive":
        return estimate_additive(data)
    if spec.kind == "mle":
        return estimate_mle(data)
    if spec.kind == "low_rank":
        if spec.rank is None:
            raise ValueError("low_rank baseline needs a rank")
        return estimate_low_rank(data, spec.rank)
    if spec.kind == "minimax":
        return estimate_minimax(data, spec.variant, spec.noise_scale)
    raise ValueError(f"unknown baseline kind {spec.kind!r}")
