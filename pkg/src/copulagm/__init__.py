"""Sparse latent-correlation graph estimation for mixed data.

Continuous, binary, ordinal and count margins are handled through a latent
Gaussian correlation structure: either a rank-based Monte Carlo EM fit of
an L1-penalized precision, or a pairwise rank-correlation plug-in followed
by the same penalized solver.  Includes AIC/BIC selection along penalty
paths and a simulation harness for structure-recovery comparisons.
"""

__version__ = "0.1.0"

from .copulaem import (EmResult, EmSettings, IcReport, em_fit, em_path,
                       information_criteria, select_model)
from .copulatau import (DEFAULT_CANDIDATES, CopulaFamily, PairCopulaFit, TauMatrix,
                        TauWarning, correlation_from_tau, fit_pair_copula,
                        kendall_tau_matrix, nearest_psd, sample_kendall_tau,
                        skeptic_fit, tau_from_copula)
from .dataio import (ColumnSpec, DataError, IntervalBounds, MixedDataset,
                     ThresholdSet, VariableKind, dataset_normal_scores,
                     interval_bounds, load_dataset, normal_scores,
                     ordinal_thresholds, rescaled_ecdf)
from .glasso import (CorrelationMatrix, PrecisionEstimate, SolverError,
                     SolverSettings, SolverWarning, glasso_fit, glasso_path,
                     kkt_residual, lambda_grid_auto)
from .simulate import (METHODS, ComparisonResult, GraphModel, RocCurve, SimDesign,
                       SimulationError, generate_mixed_data, inject_outliers,
                       random_sparse_precision, roc_curve, run_comparison,
                       truncated_normal_scores)
from .tmvn import (McSettings, RowMoments, expected_covariance_full,
                   expected_covariance_partitioned, gibbs_row,
                   trunc_norm_moments_1d)

__all__ = [
    "__version__",
    # data handling
    "ColumnSpec", "DataError", "IntervalBounds", "MixedDataset", "ThresholdSet",
    "VariableKind", "dataset_normal_scores", "interval_bounds", "load_dataset",
    "normal_scores", "ordinal_thresholds", "rescaled_ecdf",
    # penalized solver
    "CorrelationMatrix", "PrecisionEstimate", "SolverError", "SolverSettings",
    "SolverWarning", "glasso_fit", "glasso_path", "kkt_residual",
    "lambda_grid_auto",
    # truncated-normal moments
    "McSettings", "RowMoments", "expected_covariance_full",
    "expected_covariance_partitioned", "gibbs_row", "trunc_norm_moments_1d",
    # EM and model selection
    "EmResult", "EmSettings", "IcReport", "em_fit", "em_path",
    "information_criteria", "select_model",
    # pairwise rank-correlation route
    "DEFAULT_CANDIDATES", "CopulaFamily", "PairCopulaFit", "TauMatrix",
    "TauWarning", "correlation_from_tau", "fit_pair_copula",
    "kendall_tau_matrix", "nearest_psd", "sample_kendall_tau", "skeptic_fit",
    "tau_from_copula",
    # simulation and evaluation
    "METHODS", "ComparisonResult", "GraphModel", "RocCurve", "SimDesign",
    "SimulationError", "generate_mixed_data", "inject_outliers",
    "random_sparse_precision", "roc_curve", "run_comparison",
    "truncated_normal_scores",
]
