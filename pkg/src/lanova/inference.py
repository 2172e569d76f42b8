"""Heavy-tail diagnostic for the interaction block and closed-form power.

Under the null of normal interactions plus normal noise the raw
fourth-moment statistic, scaled by the total variance, is asymptotically
standard normal.  Heavy-tailed interactions push it to the right, so the
test is one-sided: reject when the statistic exceeds the upper normal
quantile.  The statistic keeps the raw (possibly negative) fourth-moment
estimate in the numerator and the clipped variance estimates in the
denominator, which keeps the null distribution centered while the
denominator stays nonnegative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.stats import norm

from .nuisance import estimate_nuisance
from .tensors import as_array

__all__ = [
    "TestResult",
    "heavy_tail_test",
    "power_laplace",
    "power_bernoulli_normal",
]


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    alpha: float
    reject: bool


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")


def heavy_tail_test(data, alpha: float = 0.05) -> TestResult:
    """Test whether the interaction block has heavier than normal tails.

    Parameters
    ----------
    data : DenseTensor or array-like
        Fully observed K-way array, K >= 2, every mode size >= 2.
    alpha : float
        One-sided level in (0, 1).

    Raises
    ------
    ValueError
        If the total variance estimate is zero (constant input) or the
        input is otherwise unusable.
    """
    _check_alpha(alpha)
    arr = as_array(data)
    est = estimate_nuisance(arr)
    total = est.sigma2_c + est.sigma2_z
    if total <= 0.0:
        raise ValueError("zero total variance: test statistic undefined")
    cells = arr.size
    statistic = (
        math.sqrt(cells) * est.sigma4_c_raw / (math.sqrt(8.0 / 3.0) * total * total)
    )
    p_value = float(norm.sf(statistic))
    reject = statistic > float(norm.ppf(1.0 - alpha))
    return TestResult(float(statistic), p_value, alpha, bool(reject))


def power_laplace(phi2: float, cells: int, alpha: float = 0.05) -> float:
    """Asymptotic rejection probability under Laplace interactions.

    ``phi2`` is the signal-to-noise ratio sigma2_c / sigma2_z and
    ``cells`` the total number of cells.  Monotone in both.
    """
    _check_alpha(alpha)
    if phi2 < 0.0:
        raise ValueError(f"phi2 must be nonnegative, got {phi2}")
    if cells < 1:
        raise ValueError(f"cells must be positive, got {cells}")
    z = float(norm.ppf(1.0 - alpha))
    shift = math.sqrt(3.0 * cells / 8.0) * (phi2 / (phi2 + 1.0)) ** 2
    spread = math.sqrt(
        1.0 + (68.0 * phi2**4 + 36.0 * phi2**3 + 9.0 * phi2**2) / (1.0 + phi2) ** 4
    )
    return float(norm.sf((z - shift) / spread))


def power_bernoulli_normal(
    phi2: float, pi_c: float, cells: int, alpha: float = 0.05
) -> float:
    """Asymptotic rejection probability under sparse normal interactions.

    The interaction is zero with probability 1 - pi_c and normal with
    variance phi2 * sigma2_z otherwise.  At pi_c of 0 or 1 the
    interaction tails are normal and the power equals the level.
    """
    _check_alpha(alpha)
    if phi2 < 0.0:
        raise ValueError(f"phi2 must be nonnegative, got {phi2}")
    if not 0.0 <= pi_c <= 1.0:
        raise ValueError(f"pi_c must be in [0, 1], got {pi_c}")
    if cells < 1:
        raise ValueError(f"cells must be positive, got {cells}")
    z = float(norm.ppf(1.0 - alpha))
    base = pi_c * phi2 + 1.0
    shift = pi_c * (1.0 - pi_c) * math.sqrt(3.0 * cells / 8.0) * (phi2 / base) ** 2
    poly = (
        (20.0 * pi_c**2 - 28.0 * pi_c + 35.0) * phi2**4
        + 16.0 * (5.0 - pi_c) * phi2**3
        + 72.0 * phi2**2
    )
    spread = math.sqrt(1.0 + pi_c * (1.0 - pi_c) * poly / (8.0 * base**4))
    return float(norm.sf((z - shift) / spread))
