"""Sparse ANOVA interaction estimation for balanced multiway data.

Moment-based variance estimates turn a lasso-penalized cell-means fit
into a tuning-free procedure: the doubly centered residual identifies
the interaction and noise variances, those variances set the penalty,
and the same fourth-moment machinery yields a test for heavy-tailed
interactions with closed-form power.
"""

from .baselines import (
    BaselineSpec,
    apply_baseline,
    estimate_additive,
    estimate_low_rank,
    estimate_minimax,
    estimate_mle,
    mad_scale,
    sure_threshold,
)
from .inference import (
    TestResult,
    heavy_tail_test,
    power_bernoulli_normal,
    power_laplace,
)
from .nuisance import (
    LowerOrderVariances,
    NuisanceEstimates,
    bias_sigma4,
    estimate_lower_order_variances,
    estimate_nuisance,
    kurtosis_correction,
    moment_factor,
    variance_inflation,
)
from .simulate import (
    BernoulliNormal,
    ExpPower,
    Laplace,
    PowerCase,
    RiskPoint,
    RiskTable,
    SimConfig,
    StudyResult,
    bernoulli_normal_grid,
    bias_study,
    exp_power_grid,
    generate_dataset,
    misspecification_study,
    power_agreement_study,
    replicate_rng,
    risk_study,
    special_case_rate_study,
    test_calibration_study,
)
from .solver import (
    LanovaFit,
    SolverOptions,
    fit_lanova,
    fit_lanova_full,
    objective,
    soft_threshold,
)
from .tensorio import (
    load_input,
    logit_transform,
    read_config,
    read_csv_matrix,
    read_tensor_file,
    write_csv_matrix,
    write_tensor_file,
)
from .tensors import (
    AnovaDecomposition,
    DenseTensor,
    anova_decompose,
    center_residuals,
    sample_moments,
)

__version__ = "0.1.0"
