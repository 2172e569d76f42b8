"""Monte Carlo studies: clipping rates, test calibration, estimator risk,
power agreement, and behaviour under misspecified interaction tails.

Replicates draw from independent substreams keyed by (seed, grid index,
replicate), so single replicates can be reproduced in isolation and the
results do not depend on execution order.  Studies that sweep a grid
give each grid point its own substream family.  The environment
variable LANOVA_THREADS caps the worker pool; the default is
sequential, and any worker count yields identical results.

Synthetic cell means contain the interaction block only (no grand mean
or main effects), so the true means equal the true interactions.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import gammaln

from .baselines import BaselineSpec, apply_baseline
from .inference import heavy_tail_test, power_bernoulli_normal, power_laplace
from .nuisance import estimate_nuisance, bias_sigma4
from .solver import fit_lanova
from .tensors import DenseTensor

__all__ = [
    "Laplace",
    "ExpPower",
    "BernoulliNormal",
    "SimConfig",
    "StudyResult",
    "RiskPoint",
    "RiskTable",
    "PowerCase",
    "replicate_rng",
    "generate_dataset",
    "special_case_rate_study",
    "test_calibration_study",
    "bias_study",
    "power_agreement_study",
    "risk_study",
    "misspecification_study",
    "bernoulli_normal_grid",
    "exp_power_grid",
]


# ---------------------------------------------------------------------------
# interaction distributions


@dataclass(frozen=True)
class Laplace:
    """Laplace interactions with variance sigma2_c."""

    sigma2_c: float

    label = "laplace"

    @property
    def variance(self) -> float:
        return self.sigma2_c

    @property
    def excess_kurtosis(self) -> float:
        return 3.0

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.laplace(0.0, math.sqrt(self.sigma2_c / 2.0), shape)

    def params(self) -> tuple[tuple[str, float], ...]:
        return (("sigma2_c", self.sigma2_c),)


@dataclass(frozen=True)
class ExpPower:
    """Exponential-power interactions, density proportional to
    exp(-|x / alpha|**q_c), scaled to variance sigma2_c.

    q_c = 1 recovers Laplace, q_c = 2 normal; smaller q_c means heavier
    tails.
    """

    sigma2_c: float
    q_c: float

    label = "exp_power"

    def __post_init__(self):
        if self.q_c <= 0.0:
            raise ValueError(f"q_c must be positive, got {self.q_c}")

    @property
    def variance(self) -> float:
        return self.sigma2_c

    @property
    def excess_kurtosis(self) -> float:
        q = self.q_c
        return math.exp(
            gammaln(5.0 / q) + gammaln(1.0 / q) - 2.0 * gammaln(3.0 / q)
        ) - 3.0

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        # |X/alpha|**q is Gamma(1/q, 1); draw magnitudes first, then signs
        q = self.q_c
        alpha = math.sqrt(self.sigma2_c) * math.exp(
            0.5 * (gammaln(1.0 / q) - gammaln(3.0 / q))
        )
        magnitude = rng.gamma(1.0 / q, 1.0, shape) ** (1.0 / q)
        sign = rng.integers(0, 2, shape) * 2.0 - 1.0
        return alpha * sign * magnitude

    def params(self) -> tuple[tuple[str, float], ...]:
        return (("q_c", self.q_c), ("sigma2_c", self.sigma2_c))


@dataclass(frozen=True)
class BernoulliNormal:
    """Interactions that are zero with probability 1 - pi_c and normal
    with variance tau2_c otherwise; pi_c = 1 is plain normal."""

    pi_c: float
    tau2_c: float

    label = "bernoulli_normal"

    def __post_init__(self):
        if not 0.0 <= self.pi_c <= 1.0:
            raise ValueError(f"pi_c must be in [0, 1], got {self.pi_c}")

    @property
    def variance(self) -> float:
        return self.pi_c * self.tau2_c

    @property
    def excess_kurtosis(self) -> float:
        if self.pi_c <= 0.0:
            raise ValueError("excess kurtosis undefined at pi_c = 0")
        return 3.0 * (1.0 - self.pi_c) / self.pi_c

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        # draw the full normal field regardless of the mask so the
        # stream layout does not depend on pi_c
        mask = rng.random(shape) < self.pi_c
        values = rng.normal(0.0, math.sqrt(self.tau2_c), shape)
        return np.where(mask, values, 0.0)

    def params(self) -> tuple[tuple[str, float], ...]:
        return (("pi_c", self.pi_c), ("tau2_c", self.tau2_c))


CDist = Union[Laplace, ExpPower, BernoulliNormal]


# ---------------------------------------------------------------------------
# configuration and replicate plumbing


DEFAULT_BASELINES = (
    BaselineSpec("mle"),
    BaselineSpec("additive"),
    BaselineSpec("low_rank", rank=1),
    BaselineSpec("low_rank", rank=5),
    BaselineSpec("minimax", variant="universal"),
    BaselineSpec("minimax", variant="sure"),
)


@dataclass(frozen=True)
class SimConfig:
    dims: tuple[int, ...]
    c_dist: CDist
    sigma2_z: float = 1.0
    n_reps: int = 10_000
    seed: int = 0
    estimators: tuple[BaselineSpec, ...] = DEFAULT_BASELINES


def replicate_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent substream for one replicate of one grid point.

    Identical (seed, key) always yields the same stream, on any machine
    and regardless of which other replicates have run.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def _draw(dist: CDist, dims, sigma2_z: float, rng: np.random.Generator):
    c = dist.sample(rng, dims)
    z = rng.normal(0.0, math.sqrt(sigma2_z), dims)
    return c + z, c


def generate_dataset(cfg: SimConfig, rep: int):
    """One replicate: (Y, true means, true interactions).

    The true means equal the true interactions because no grand mean or
    main effects are planted.
    """
    rng = replicate_rng(cfg.seed, rep)
    y, c = _draw(cfg.c_dist, cfg.dims, cfg.sigma2_z, rng)
    truth = DenseTensor.from_array(c)
    return DenseTensor.from_array(y), truth, truth


def _worker_count() -> int:
    raw = os.environ.get("LANOVA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_replicates(fn, n_reps: int) -> list:
    """Evaluate fn(rep) for rep in range(n_reps), results in rep order."""
    workers = _worker_count()
    if workers == 1:
        return [fn(rep) for rep in range(n_reps)]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_reps)))


def _rate_se(rate: float, n: int) -> float:
    return math.sqrt(rate * (1.0 - rate) / n)


@dataclass(frozen=True)
class StudyResult:
    study: str
    fieldnames: tuple[str, ...]
    rows: tuple[dict, ...]


# ---------------------------------------------------------------------------
# studies


def special_case_rate_study(
    cfg: SimConfig, sigma2_c_grid=(0.5, 1.0, 1.5)
) -> StudyResult:
    """How often the moment estimators collapse to a special case.

    For each interaction variance on the grid, Laplace interactions plus
    normal noise are generated and the fractions of replicates with a
    clipped (nonpositive) interaction variance estimate and a clipped
    noise variance estimate are recorded.
    """
    rows = []
    for g, sigma2_c in enumerate(sigma2_c_grid):
        dist = Laplace(sigma2_c)

        def one(rep, g=g, dist=dist):
            rng = replicate_rng(cfg.seed, g, rep)
            y, _ = _draw(dist, cfg.dims, cfg.sigma2_z, rng)
            est = estimate_nuisance(y)
            return est.sigma2_c <= 0.0, est.clipped_z

        flags = _map_replicates(one, cfg.n_reps)
        rate_c = sum(f[0] for f in flags) / cfg.n_reps
        rate_z = sum(f[1] for f in flags) / cfg.n_reps
        rows.append(
            {
                "sigma2_c": sigma2_c,
                "rate_clipped_c": rate_c,
                "se_clipped_c": _rate_se(rate_c, cfg.n_reps),
                "rate_clipped_z": rate_z,
                "n_reps": cfg.n_reps,
            }
        )
    return StudyResult(
        "special-cases",
        ("sigma2_c", "rate_clipped_c", "se_clipped_c", "rate_clipped_z", "n_reps"),
        tuple(rows),
    )


def test_calibration_study(
    cfg: SimConfig, sigma2_c_grid=(0.5, 1.0, 1.5), alpha: float = 0.05
) -> StudyResult:
    """Empirical level of the heavy-tail test under normal interactions."""
    rows = []
    for g, sigma2_c in enumerate(sigma2_c_grid):
        dist = BernoulliNormal(1.0, sigma2_c)

        def one(rep, g=g, dist=dist):
            rng = replicate_rng(cfg.seed, g, rep)
            y, _ = _draw(dist, cfg.dims, cfg.sigma2_z, rng)
            return heavy_tail_test(y, alpha).reject

        rejects = _map_replicates(one, cfg.n_reps)
        level = sum(rejects) / cfg.n_reps
        rows.append(
            {
                "sigma2_c": sigma2_c,
                "alpha": alpha,
                "level": level,
                "se": _rate_se(level, cfg.n_reps),
                "n_reps": cfg.n_reps,
            }
        )
    return StudyResult(
        "test-level", ("sigma2_c", "alpha", "level", "se", "n_reps"), tuple(rows)
    )


def bias_study(cfg: SimConfig) -> StudyResult:
    """Mean of the raw fourth-moment estimator against its exact value.

    The closed-form bias holds under Laplace interactions, so the
    configured interaction distribution must be Laplace.
    """
    if not isinstance(cfg.c_dist, Laplace):
        raise ValueError("bias study requires Laplace interactions")
    sigma2_c = cfg.c_dist.sigma2_c

    def one(rep):
        rng = replicate_rng(cfg.seed, 0, rep)
        y, _ = _draw(cfg.c_dist, cfg.dims, cfg.sigma2_z, rng)
        return estimate_nuisance(y).sigma4_c_raw

    raws = np.array(_map_replicates(one, cfg.n_reps))
    predicted = sigma2_c**2 + bias_sigma4(cfg.dims, sigma2_c, cfg.sigma2_z)
    row = {
        "sigma2_c": sigma2_c,
        "sigma2_z": cfg.sigma2_z,
        "observed_mean": float(raws.mean()),
        "se": float(raws.std(ddof=1) / math.sqrt(cfg.n_reps)),
        "predicted_mean": float(predicted),
        "n_reps": cfg.n_reps,
    }
    return StudyResult(
        "bias",
        ("sigma2_c", "sigma2_z", "observed_mean", "se", "predicted_mean", "n_reps"),
        (row,),
    )


@dataclass(frozen=True)
class PowerCase:
    """One power-agreement cell: interaction family and signal strength.

    ``phi2`` is the signal-to-noise ratio; for the sparse normal family
    it applies to the nonzero entries and ``pi_c`` gives their
    probability.
    """

    dist_kind: str
    phi2: float
    pi_c: float | None = None


DEFAULT_POWER_CASES = (
    PowerCase("laplace", 0.5),
    PowerCase("laplace", 1.0),
    PowerCase("laplace", 2.0),
    PowerCase("bernoulli_normal", 2.0, 0.1),
    PowerCase("bernoulli_normal", 1.0, 0.5),
)


def power_agreement_study(
    cfg: SimConfig, cases=DEFAULT_POWER_CASES, alpha: float = 0.05
) -> StudyResult:
    """Empirical rejection rate against the closed-form power."""
    cells = math.prod(cfg.dims)
    rows = []
    for g, case in enumerate(cases):
        if case.dist_kind == "laplace":
            dist: CDist = Laplace(case.phi2 * cfg.sigma2_z)
            theory = power_laplace(case.phi2, cells, alpha)
        elif case.dist_kind == "bernoulli_normal":
            if case.pi_c is None:
                raise ValueError("bernoulli_normal power case needs pi_c")
            dist = BernoulliNormal(case.pi_c, case.phi2 * cfg.sigma2_z)
            theory = power_bernoulli_normal(case.phi2, case.pi_c, cells, alpha)
        else:
            raise ValueError(f"unknown power case family {case.dist_kind!r}")

        def one(rep, g=g, dist=dist):
            rng = replicate_rng(cfg.seed, g, rep)
            y, _ = _draw(dist, cfg.dims, cfg.sigma2_z, rng)
            return heavy_tail_test(y, alpha).reject

        rejects = _map_replicates(one, cfg.n_reps)
        rate = sum(rejects) / cfg.n_reps
        rows.append(
            {
                "dist": case.dist_kind,
                "phi2": case.phi2,
                "pi_c": case.pi_c if case.pi_c is not None else "",
                "cells": cells,
                "alpha": alpha,
                "empirical": rate,
                "se": _rate_se(rate, cfg.n_reps),
                "theoretical": theory,
                "n_reps": cfg.n_reps,
            }
        )
    return StudyResult(
        "power-agreement",
        (
            "dist",
            "phi2",
            "pi_c",
            "cells",
            "alpha",
            "empirical",
            "se",
            "theoretical",
            "n_reps",
        ),
        tuple(rows),
    )


def bernoulli_normal_grid(
    pi_values=tuple(round(0.1 * k, 1) for k in range(11)),
    tau2_values=(0.5, 1.0, 2.0),
) -> tuple[BernoulliNormal, ...]:
    return tuple(
        BernoulliNormal(pi, tau2) for tau2 in tau2_values for pi in pi_values
    )


def exp_power_grid(
    q_values=(0.1, 0.3, 0.5, 0.7, 0.9, 1.1, 1.3, 1.5, 1.7, 1.9),
    sigma2_values=(0.5, 1.0, 2.0),
) -> tuple[ExpPower, ...]:
    return tuple(ExpPower(s2, q) for s2 in sigma2_values for q in q_values)


@dataclass(frozen=True)
class RiskPoint:
    """Risk summary at one grid point.

    ``diff_mean`` and ``diff_se`` describe the per-replicate paired
    differences MSE(estimator) - MSE(lanova); pairing uses common random
    numbers, so the differences are far less noisy than the levels.
    """

    params: tuple[tuple[str, object], ...]
    mse: dict[str, float]
    se: dict[str, float]
    diff_mean: dict[str, float]
    diff_se: dict[str, float]


@dataclass(frozen=True)
class RiskTable:
    dims: tuple[int, ...]
    sigma2_z: float
    n_reps: int
    seed: int
    labels: tuple[str, ...]
    points: tuple[RiskPoint, ...]

    study = "risk"

    def log_relative_risk(self, point: RiskPoint, label: str) -> float:
        return math.log(point.mse[label] / point.mse["lanova"])

    @property
    def fieldnames(self) -> tuple[str, ...]:
        names = [name for name, _ in self.points[0].params]
        for label in self.labels:
            names += [f"mse_{label}", f"se_{label}"]
            if label != "lanova":
                names += [f"log_rel_{label}", f"diff_se_{label}"]
        return tuple(names)

    @property
    def rows(self) -> tuple[dict, ...]:
        out = []
        for point in self.points:
            row = dict(point.params)
            for label in self.labels:
                row[f"mse_{label}"] = point.mse[label]
                row[f"se_{label}"] = point.se[label]
                if label != "lanova":
                    row[f"log_rel_{label}"] = self.log_relative_risk(point, label)
                    row[f"diff_se_{label}"] = point.diff_se[label]
            out.append(row)
        return tuple(out)


def risk_study(cfg: SimConfig, grid) -> RiskTable:
    """Mean squared error of each estimator over a distribution grid.

    Every estimator sees the same replicate data (common random
    numbers), and per-replicate paired differences against the
    penalized fit are summarized alongside the levels.
    """
    labels = ("lanova",) + tuple(spec.label() for spec in cfg.estimators)
    cells = math.prod(cfg.dims)
    points = []
    for g, dist in enumerate(grid):

        def one(rep, g=g, dist=dist):
            rng = replicate_rng(cfg.seed, g, rep)
            y, c = _draw(dist, cfg.dims, cfg.sigma2_z, rng)
            out = np.empty(len(labels))
            fit = fit_lanova(y, estimate_nuisance(y))
            out[0] = ((fit.fitted().array - c) ** 2).sum() / cells
            for j, spec in enumerate(cfg.estimators, start=1):
                est = apply_baseline(y, spec).array
                out[j] = ((est - c) ** 2).sum() / cells
            return out

        per_rep = np.vstack(_map_replicates(one, cfg.n_reps))
        means = per_rep.mean(axis=0)
        ses = per_rep.std(axis=0, ddof=1) / math.sqrt(cfg.n_reps)
        diffs = per_rep[:, 1:] - per_rep[:, :1]
        dmeans = diffs.mean(axis=0)
        dses = diffs.std(axis=0, ddof=1) / math.sqrt(cfg.n_reps)
        points.append(
            RiskPoint(
                params=(("dist", dist.label),) + dist.params(),
                mse={lab: float(v) for lab, v in zip(labels, means)},
                se={lab: float(v) for lab, v in zip(labels, ses)},
                diff_mean={lab: float(v) for lab, v in zip(labels[1:], dmeans)},
                diff_se={lab: float(v) for lab, v in zip(labels[1:], dses)},
            )
        )
    return RiskTable(
        cfg.dims, cfg.sigma2_z, cfg.n_reps, cfg.seed, labels, tuple(points)
    )


def misspecification_study(cfg: SimConfig, grid=None) -> StudyResult:
    """Median interaction-variance ratio against its heavy-tail limit.

    For each distribution the ratio of the estimated to the true
    interaction variance is compared with sqrt(kappa / 3), the limit for
    excess kurtosis kappa.  Distributions must have positive excess
    kurtosis.
    """
    if grid is None:
        grid = tuple(ExpPower(1.0, q) for q in (0.5, 1.0, 1.5)) + tuple(
            BernoulliNormal(pi, 1.0) for pi in (0.25, 0.5, 0.75)
        )
    rows = []
    for g, dist in enumerate(grid):
        kappa = dist.excess_kurtosis
        if kappa <= 0.0:
            raise ValueError(f"{dist!r} has nonpositive excess kurtosis")

        def one(rep, g=g, dist=dist):
            rng = replicate_rng(cfg.seed, g, rep)
            y, _ = _draw(dist, cfg.dims, cfg.sigma2_z, rng)
            return estimate_nuisance(y).sigma2_c / dist.variance

        ratios = np.array(_map_replicates(one, cfg.n_reps))
        row = {"dist": dist.label}
        row.update(dict(dist.params()))
        row.update(
            {
                "kappa": kappa,
                "predicted_ratio": math.sqrt(kappa / 3.0),
                "median_ratio": float(np.median(ratios)),
                "n_reps": cfg.n_reps,
            }
        )
        rows.append(row)
    fieldnames = ["dist"]
    for row in rows:
        for key in row:
            if key not in fieldnames:
                fieldnames.append(key)
    return StudyResult("misspec", tuple(fieldnames), tuple(rows))
