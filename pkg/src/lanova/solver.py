"""Block coordinate descent for the penalized cell-means fit.

The objective is

    (1 / (2 sigma2_z)) ||Y - M||_F^2  +  sum of L1 penalties,

where M splits into ANOVA-style blocks and only some blocks are
penalized.  In the basic variant the grand mean and all lower-order
blocks are free and the full interaction block C carries the penalty
lambda_c ||vec C||_1.  Each sweep therefore alternates an exact least
squares fit of the free blocks (the ANOVA decomposition of Y - C minus
its top block) with an elementwise soft threshold of the partial
residual at lambda_c * sigma2_z.  Both block updates are exact
minimizers, so the objective never increases and the iterates converge
to a global minimum of the convex objective.

The full variant (matrices only) additionally penalizes the main
effects.  Averaging over a row or column divides the effective penalty,
so the per-coordinate thresholds are lambda_a sigma2_z / p for row
effects and lambda_b sigma2_z / n for column effects.  Penalized main
effects are not constrained to sum to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nuisance import LowerOrderVariances, NuisanceEstimates
from .tensors import (
    AnovaDecomposition,
    DenseTensor,
    _embed,
    anova_decompose,
    as_array,
    center_residuals,
)

__all__ = [
    "SolverOptions",
    "LanovaFit",
    "soft_threshold",
    "fit_lanova",
    "fit_lanova_full",
    "objective",
]


def soft_threshold(x, threshold: float):
    """sign(x) * max(|x| - threshold, 0); threshold +inf maps all to zero."""
    arr = np.asarray(x, dtype=float)
    if math.isinf(threshold):
        out = np.zeros_like(arr)
    else:
        out = np.sign(arr) * np.maximum(np.abs(arr) - threshold, 0.0)
    if np.isscalar(x):
        return float(out)
    return out


@dataclass(frozen=True)
class SolverOptions:
    """Iteration controls.

    ``tol`` bounds the relative sup-norm change of a sweep's block
    updates; the objective decrement is recorded per sweep but is too
    noisy near the solution to gate convergence.
    ``penalize_lower_order`` selects the full variant in code that
    dispatches on options alone (the CLI does); the two fit functions
    can always be called directly.
    """

    tol: float = 1e-10
    max_sweeps: int = 500
    penalize_lower_order: bool = False


@dataclass
class LanovaFit:
    """Result of a penalized fit.

    ``decomposition`` holds the solver's blocks with the penalized
    interaction as the top block and the data minus fitted means as the
    residual.  ``objective_trace`` has one value per sweep and is
    non-increasing; it is empty when a special case bypassed iteration.
    """

    decomposition: AnovaDecomposition
    nonzero_counts: dict[tuple[int, ...], int]
    objective_trace: list[float]
    iterations: int
    converged: bool

    def fitted(self) -> DenseTensor:
        return self.decomposition.reassemble()

    def interaction(self) -> np.ndarray:
        return self.decomposition.interaction()


def _penalty_term(rate: float, l1):
    # an infinite rate on an exactly-zero block contributes nothing
    if l1 == 0.0:
        return 0.0
    return rate * l1


def _validated(data) -> np.ndarray:
    arr = as_array(data)
    if arr.ndim < 2:
        raise ValueError("need at least two modes")
    if not np.isfinite(arr).all():
        raise ValueError("non-finite values in input")
    return arr


def _build_fit(arr, effects, trace, iterations, converged) -> LanovaFit:
    top = tuple(range(1, arr.ndim + 1))
    fitted = np.zeros(arr.shape)
    for key, block in effects.items():
        fitted = fitted + _embed(block, key, arr.ndim)
    decomposition = AnovaDecomposition(
        tuple(arr.shape), effects, DenseTensor.from_array(arr - fitted)
    )
    counts = {key: int(np.count_nonzero(block)) for key, block in effects.items()}
    return LanovaFit(decomposition, counts, trace, iterations, converged)


def _interpolating_fit(arr: np.ndarray) -> LanovaFit:
    # zero noise variance: no shrinkage is possible, the data are
    # reproduced exactly and the doubly centered residual plays C
    dec = anova_decompose(arr)
    return _build_fit(arr, dict(dec.effects), [], 0, True)


def _quad(arr, fitted, sigma2_z: float):
    # extended-precision accumulation: the convergence check compares
    # consecutive objectives whose difference underflows double rounding
    # near the solution
    diff = arr - fitted
    return (diff * diff).sum(dtype=np.longdouble) / (2.0 * sigma2_z)


def fit_lanova(
    data,
    nuisance: NuisanceEstimates,
    options: SolverOptions | None = None,
) -> LanovaFit:
    """Fit free lower-order blocks and a penalized interaction block.

    Parameters
    ----------
    data : DenseTensor or array-like
        Fully observed K-way array, K >= 2, every mode size >= 2, all
        values finite.
    nuisance : NuisanceEstimates
        Noise variance and penalty, typically from estimate_nuisance.
    options : SolverOptions, optional
        Convergence tolerance (relative objective change) and sweep cap.

    Special cases: a clipped interaction variance (infinite penalty)
    returns the strictly additive fit with C = 0; a zero noise variance
    returns the interpolating fit with M = Y.
    """
    opts = options or SolverOptions()
    arr = _validated(data)
    top = tuple(range(1, arr.ndim + 1))

    if nuisance.clipped_z or nuisance.sigma2_z <= 0.0:
        return _interpolating_fit(arr)
    sigma2_z = nuisance.sigma2_z
    threshold = nuisance.lambda_c * sigma2_z
    if nuisance.clipped_c or math.isinf(threshold):
        dec = anova_decompose(arr)
        effects = dict(dec.effects)
        effects[top] = np.zeros(arr.shape)
        obj = _quad(arr, dec.lower_order_sum(), sigma2_z)
        return _build_fit(arr, effects, [float(obj)], 0, True)

    c = center_residuals(arr).array
    trace: list[float] = []
    prev = math.inf
    converged = False
    sweeps = 0
    for _ in range(opts.max_sweeps):
        c_old = c
        lower = anova_decompose(arr - c).lower_order_sum()
        c = soft_threshold(arr - lower, threshold)
        obj = _quad(arr, lower + c, sigma2_z) + _penalty_term(
            nuisance.lambda_c, np.abs(c).sum(dtype=np.longdouble)
        )
        assert obj <= prev + 1e-9 * max(1.0, abs(obj)), "objective increased"
        trace.append(float(obj))
        prev = obj
        sweeps += 1
        # stop on the sweep's update size, not the objective decrement:
        # the decrement drowns in iterate rounding noise while the block
        # updates still contract geometrically toward the fixed point
        delta = float(np.max(np.abs(c - c_old)))
        if delta <= opts.tol * max(1.0, float(np.max(np.abs(c)))):
            converged = True
            break

    # final refresh: the returned lower blocks are the exact ANOVA
    # margins of Y - C, which also restores the marginal-agreement
    # identity to rounding error
    effects = dict(anova_decompose(arr - c).effects)
    effects[top] = np.asarray(c)
    return _build_fit(arr, effects, trace, sweeps, converged)


def fit_lanova_full(
    data,
    nuisance: NuisanceEstimates,
    lower_order: LowerOrderVariances,
    options: SolverOptions | None = None,
) -> LanovaFit:
    """Matrix fit with penalized main effects as well as interactions.

    Cyclic block descent over the grand mean, row effects, column
    effects, and the interaction block.  With both main-effect penalties
    at zero this reproduces :func:`fit_lanova` exactly.  Infinite
    main-effect penalties zero the corresponding block, reducing to a
    grand-mean-plus-interactions fit.
    """
    opts = options or SolverOptions()
    arr = _validated(data)
    if arr.ndim != 2:
        raise ValueError("penalized main effects are matrix-only")
    n, p = arr.shape

    if nuisance.clipped_z or nuisance.sigma2_z <= 0.0:
        return _interpolating_fit(arr)
    sigma2_z = nuisance.sigma2_z
    t_c = nuisance.lambda_c * sigma2_z
    t_a = lower_order.lambda_a * sigma2_z / p
    t_b = lower_order.lambda_b * sigma2_z / n
    freeze_c = nuisance.clipped_c or math.isinf(t_c)

    c = np.zeros((n, p)) if freeze_c else center_residuals(arr).array
    mu = 0.0
    a = np.zeros(n)
    b = np.zeros(p)
    trace: list[float] = []
    prev = math.inf
    converged = False
    sweeps = 0
    for _ in range(opts.max_sweeps):
        fitted_old = mu + a[:, None] + b[None, :] + c
        c_old = c
        base = arr - c
        mu = float((base - a[:, None] - b[None, :]).mean())
        a = soft_threshold((base - mu - b[None, :]).mean(axis=1), t_a)
        b = soft_threshold((base - mu - a[:, None]).mean(axis=0), t_b)
        if not freeze_c:
            c = soft_threshold(arr - mu - a[:, None] - b[None, :], t_c)
        fitted = mu + a[:, None] + b[None, :] + c
        obj = (
            _quad(arr, fitted, sigma2_z)
            + _penalty_term(lower_order.lambda_a, np.abs(a).sum(dtype=np.longdouble))
            + _penalty_term(lower_order.lambda_b, np.abs(b).sum(dtype=np.longdouble))
            + _penalty_term(nuisance.lambda_c, np.abs(c).sum(dtype=np.longdouble))
        )
        assert obj <= prev + 1e-9 * max(1.0, abs(obj)), "objective increased"
        trace.append(float(obj))
        prev = obj
        sweeps += 1
        delta = max(
            float(np.max(np.abs(fitted - fitted_old))),
            float(np.max(np.abs(c - c_old))),
        )
        if delta <= opts.tol * max(1.0, float(np.max(np.abs(fitted)))):
            converged = True
            break

    # refresh the free blocks against the final interaction block
    base = arr - c
    mu = float((base - a[:, None] - b[None, :]).mean())
    a = soft_threshold((base - mu - b[None, :]).mean(axis=1), t_a)
    b = soft_threshold((base - mu - a[:, None]).mean(axis=0), t_b)
    effects = {
        (): np.asarray(mu, dtype=float),
        (1,): np.asarray(a),
        (2,): np.asarray(b),
        (1, 2): np.asarray(c),
    }
    return _build_fit(arr, effects, trace, sweeps, converged)


def objective(
    fit: LanovaFit,
    data,
    nuisance: NuisanceEstimates,
    lower_order: LowerOrderVariances | None = None,
) -> float:
    """Penalized least squares value of a fit.

    With ``lower_order`` given (matrices only) the main-effect penalties
    are included; otherwise only the interaction penalty applies.
    """
    if nuisance.sigma2_z <= 0.0:
        raise ValueError("degenerate objective: noise variance is zero")
    arr = as_array(data)
    dec = fit.decomposition
    value = _quad(arr, dec.reassemble().array, nuisance.sigma2_z)
    value += _penalty_term(nuisance.lambda_c, float(np.abs(dec.interaction()).sum()))
    if lower_order is not None:
        if dec.n_modes != 2:
            raise ValueError("main-effect penalties are matrix-only")
        value += _penalty_term(
            lower_order.lambda_a, float(np.abs(dec.effects[(1,)]).sum())
        )
        value += _penalty_term(
            lower_order.lambda_b, float(np.abs(dec.effects[(2,)]).sum())
        )
    return float(value)
