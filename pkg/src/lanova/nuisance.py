"""Moment-based variance estimators for interaction and noise.

The doubly centered residual depends on the data only through the
interaction block plus noise, so its second and fourth sample moments
identify the interaction variance and the noise variance under a
Laplace interaction prior.  Exact finite-sample centering corrections
enter as per-mode factors, which is what makes the same formulas work
for matrices and for K-way tensors.

The fourth-moment estimate of sigma2_c**2 can be negative in small
samples.  Estimates are clipped at zero with a flag set, and a clipped
interaction variance maps to an infinite penalty (threshold
everything), which downstream code treats as the strictly additive
special case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensors import as_array, center_residuals, sample_moments

__all__ = [
    "NuisanceEstimates",
    "LowerOrderVariances",
    "moment_factor",
    "variance_inflation",
    "estimate_nuisance",
    "bias_sigma4",
    "estimate_lower_order_variances",
    "kurtosis_correction",
]


def moment_factor(dims) -> float:
    """Centering correction for the fourth moment.

    Product over modes of p**3 / ((p - 1)(p**2 - 3p + 3)); exact for any
    number of modes, and > 1 whenever every mode size is finite.
    """
    out = 1.0
    for p in dims:
        p = float(p)
        out *= p**3 / ((p - 1.0) * (p * p - 3.0 * p + 3.0))
    return out


def variance_inflation(dims) -> float:
    """Centering correction for the second moment: prod of p/(p - 1)."""
    out = 1.0
    for p in dims:
        p = float(p)
        out *= p / (p - 1.0)
    return out


def _penalty_rate(sigma2: float) -> float:
    # Laplace rate with variance sigma2 is sqrt(2/sigma2); infinite when
    # the variance estimate collapsed to zero (threshold everything).
    if sigma2 <= 0.0:
        return math.inf
    return math.sqrt(2.0 / sigma2)


@dataclass(frozen=True)
class NuisanceEstimates:
    """Plug-in variance estimates and the implied penalty.

    ``sigma4_c_raw`` is the unclipped fourth-moment estimate of the
    squared interaction variance and may be negative.  ``sigma2_c`` and
    ``sigma2_z`` are clipped at zero with the matching flag set when
    clipping occurred.  ``lambda_c`` is +inf exactly when sigma2_c is
    zero.
    """

    sigma4_c_raw: float
    sigma2_c: float
    sigma2_z: float
    lambda_c: float
    clipped_c: bool
    clipped_z: bool


def _validated(data) -> np.ndarray:
    arr = as_array(data)
    if arr.ndim < 2:
        raise ValueError("need at least two modes")
    if not np.isfinite(arr).all():
        raise ValueError("non-finite values in input")
    return arr


def estimate_nuisance(data) -> NuisanceEstimates:
    """Estimate interaction and noise variances from the residual moments.

    Parameters
    ----------
    data : DenseTensor or array-like
        Fully observed K-way array, K >= 2, every mode size >= 2.

    Returns
    -------
    NuisanceEstimates
        sigma2_c and sigma2_z clipped at zero where needed, with
        lambda_c = sqrt(2/sigma2_c) (+inf when clipped).
    """
    arr = _validated(data)
    r2, r4 = sample_moments(center_residuals(arr))
    factor = moment_factor(arr.shape)
    sigma4_raw = factor * (r4 / 3.0 - r2 * r2)
    # <= so a degenerate input with zero residuals reports the additive
    # special case, not just strictly negative estimates
    clipped_c = sigma4_raw <= 0.0
    sigma2_c = math.sqrt(max(sigma4_raw, 0.0))
    total = variance_inflation(arr.shape) * r2
    clipped_z = total - sigma2_c < 0.0
    sigma2_z = max(total - sigma2_c, 0.0)
    return NuisanceEstimates(
        sigma4_c_raw=float(sigma4_raw),
        sigma2_c=float(sigma2_c),
        sigma2_z=float(sigma2_z),
        lambda_c=_penalty_rate(sigma2_c),
        clipped_c=bool(clipped_c),
        clipped_z=bool(clipped_z),
    )


def bias_sigma4(dims, sigma2_c: float, sigma2_z: float) -> float:
    """Exact finite-sample bias of the raw fourth-moment estimator.

    Valid under independent Laplace interactions and Gaussian noise;
    always <= 0, and vanishing as every mode grows.
    """
    factor = moment_factor(dims)
    quad = 1.0
    lin = 1.0
    for p in dims:
        p = float(p)
        quad *= (p - 1.0) ** 2 / p**3
        lin *= (p - 1.0) / (p * p)
    total = sigma2_c + sigma2_z
    return -factor * (3.0 * quad * sigma2_c**2 + 2.0 * lin * total * total)


@dataclass(frozen=True)
class LowerOrderVariances:
    """Main-effect variance estimates for a matrix, same clipping
    convention as :class:`NuisanceEstimates`."""

    sigma2_a: float
    sigma2_b: float
    lambda_a: float
    lambda_b: float
    clipped_a: bool
    clipped_b: bool


def estimate_lower_order_variances(data) -> LowerOrderVariances:
    """Estimate row- and column-effect variances of a matrix.

    Uses the centered marginal means with a correction that removes the
    noise and interaction leakage through the margins.  Matrix-only; no
    closed-form analogue is implemented for K > 2.
    """
    arr = _validated(data)
    if arr.ndim != 2:
        raise ValueError("main-effect variance estimators are matrix-only")
    n, p = arr.shape
    r2, _ = sample_moments(center_residuals(arr))
    row = arr.mean(axis=1) - arr.mean()
    col = arr.mean(axis=0) - arr.mean()
    raw_a = float((row * row).sum() / (n - 1) - n * r2 / ((n - 1) * (p - 1)))
    raw_b = float((col * col).sum() / (p - 1) - p * r2 / ((p - 1) * (n - 1)))
    sigma2_a = max(raw_a, 0.0)
    sigma2_b = max(raw_b, 0.0)
    return LowerOrderVariances(
        sigma2_a=sigma2_a,
        sigma2_b=sigma2_b,
        lambda_a=_penalty_rate(sigma2_a),
        lambda_b=_penalty_rate(sigma2_b),
        clipped_a=raw_a <= 0.0,
        clipped_b=raw_b <= 0.0,
    )


def kurtosis_correction(
    estimates: NuisanceEstimates,
    kappa: float | None = None,
    *,
    pi_c: float | None = None,
) -> NuisanceEstimates:
    """Rescale the estimates for an interaction prior with known tails.

    The moment estimators are calibrated to Laplace interactions (excess
    kurtosis 3).  When the true excess kurtosis ``kappa`` is known, the
    interaction variance is rescaled by sqrt(3/kappa) and the noise
    variance absorbs the difference, so the total variance is preserved.
    Passing ``pi_c`` instead treats the interaction as zero with
    probability 1 - pi_c and normal otherwise, which gives
    kappa = 3 (1 - pi_c) / pi_c.

    Raises
    ------
    ValueError
        If both or neither of kappa and pi_c are given, or if the
        implied excess kurtosis is not positive (normal or light tails
        leave the decomposition unidentified by these moments).
    """
    if (kappa is None) == (pi_c is None):
        raise ValueError("pass exactly one of kappa and pi_c")
    if pi_c is not None:
        if not 0.0 < pi_c <= 1.0:
            raise ValueError(f"pi_c must be in (0, 1], got {pi_c}")
        kappa = 3.0 * (1.0 - pi_c) / pi_c
    if kappa <= 0.0:
        raise ValueError(
            "normal-tails correction undefined: excess kurtosis must be positive"
        )
    scale = math.sqrt(3.0 / kappa)
    sigma2_c = scale * estimates.sigma2_c
    raw_z = estimates.sigma2_z - (1.0 - math.sqrt(kappa / 3.0)) * scale * estimates.sigma2_c
    clipped_z = raw_z < 0.0
    sigma2_z = max(raw_z, 0.0)
    return NuisanceEstimates(
        sigma4_c_raw=(3.0 / kappa) * estimates.sigma4_c_raw,
        sigma2_c=float(sigma2_c),
        sigma2_z=float(sigma2_z),
        lambda_c=_penalty_rate(sigma2_c),
        clipped_c=estimates.clipped_c,
        clipped_z=bool(clipped_z),
    )
