"""Estimate the Pareto exponent of an upper tail from tabulated top shares."""

from .dgp_sim import (
    DPLN,
    PAPER_GRID,
    SUBGRIDS,
    AbsStudentT,
    Pareto,
    SimConfig,
    kernel_density,
    run_simple_comparison,
    run_study,
    sample,
    top_shares_from_sample,
)
from .estimator import (
    EstimationResult,
    TopShareTabulation,
    cumde_objective,
    estimate_cumde,
    estimate_simple,
    lr_ci,
    normalize_shares,
    specification_test,
    wald_ci,
)
from .panel import PanelGroup, group_by_year_digit, panel_ci
from .tail_moments import (
    DegenerateMatrixError,
    PercentileGrid,
    TailShape,
    group_covariance_matrix,
    group_mean,
    group_variance,
    omega_matrix,
    ratio_jacobian,
    ratio_vector,
    stable_power_diff,
)

__version__ = "0.1.0"
