"""Average-adjusted unbiased variance estimators and their verification engines."""

from .estimators import (
    DEFAULT_TOL,
    CoefficientVector,
    EstimateReport,
    Estimator,
    InfeasibleCoefficientsError,
    aauv,
    aauv_raw,
    check_order2_conditions,
    check_order3_conditions,
    coeff_bound,
    coeffs_half_sample,
    coeffs_m_block,
    coeffs_random_feasible,
    coeffs_third_family,
    interpolated_mean,
    interpolated_variance,
    lambda_for_denominator,
    naive_variance,
    pairwise_product_sum,
    sample_mean,
    third_moment_estimator,
    third_moment_raw,
    unbiased_variance,
    weighted_mean,
)
from .symmetry import (
    PermutationAverageResult,
    permutation_average_exact,
    permutation_average_lambda_exact,
    permutation_average_sampled,
)
from .verify import (
    DistributionSpec,
    ExperimentResult,
    exact_expectation,
    paired_variance_difference,
    parse_distribution,
    run_bias_experiment,
    run_variance_comparison,
)

__version__ = "0.1.0"
