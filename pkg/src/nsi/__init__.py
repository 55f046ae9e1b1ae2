"""Nonparametric scaled-index estimation of average latent treatment effects.

Auxiliary measurements are mapped onto the scale of a benchmark measurement
by minimax NPIV bridges, turned into cross-fitted orthogonal scores and
pooled by overidentified GMM.
"""

__version__ = "0.1.0"

from .baselines import ICWIndex, PCAIndex, WSIEstimator, icw_index, index_diff_in_means, pca_index, wsi_estimate
from .basis import BasisSpec, NystromBasis, PolynomialBasis, TreeLeafBasis, fit_basis
from .bridge import BridgeFit, HyperParams, MinimaxBridge, NuisanceFit, fit_bridge_minimax, fit_xi_minimax, project_q
from .data import ColumnRoles, Dataset, FoldAssignment, assign_folds, load_csv, validate_roles
from .diagnostics import (
    DiagnosticsReport, completeness_rank_check, instrument_strength, orthogonality_residual,
)
from .estimator import NSIEstimator
from .exceptions import (
    ConfigError, DataValidationError, DegenerateDataError, InsufficientDataError, NSIError,
    NumericalError, RankError, RoleError, SchemaError, WeakInstrumentError,
)
from .gmm import GmmEstimate, MomentSummary, pool_gmm, pool_per_coefficient, summarize_moments, wald_equality_test
from .scores import ScoreMatrix, compute_riesz_weights, crossfit_scores, ht_transform
from .simulation import DgpSpec, generate_study, linear_spec, run_monte_carlo, summarize_table1

__all__ = [
    "BasisSpec", "BridgeFit", "ColumnRoles", "ConfigError", "DataValidationError", "Dataset",
    "DegenerateDataError", "DgpSpec", "DiagnosticsReport", "FoldAssignment", "GmmEstimate",
    "HyperParams", "ICWIndex", "InsufficientDataError", "MinimaxBridge", "MomentSummary",
    "NSIError", "NSIEstimator", "NuisanceFit", "NumericalError", "NystromBasis", "PCAIndex",
    "PolynomialBasis", "RankError", "RoleError", "SchemaError", "ScoreMatrix", "TreeLeafBasis",
    "WSIEstimator", "WeakInstrumentError", "assign_folds", "completeness_rank_check",
    "compute_riesz_weights", "crossfit_scores", "fit_basis", "fit_bridge_minimax", "fit_xi_minimax",
    "generate_study", "ht_transform", "icw_index", "index_diff_in_means", "instrument_strength",
    "linear_spec", "load_csv", "orthogonality_residual", "pca_index", "pool_gmm",
    "pool_per_coefficient", "project_q", "run_monte_carlo", "summarize_moments",
    "summarize_table1", "validate_roles", "wald_equality_test", "wsi_estimate",
]
