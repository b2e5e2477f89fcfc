"""Honest and adaptive causal trees and forests.

Also provides a data-driven selection workflow between the two, a
replication-based bias-variance decomposition, a single-split Monte-Carlo
laboratory and an honest CATE Lasso.
"""

from .data import Dataset, DgpSpec, generate_dataset, load_csv, save_csv, snr, split_train_test
from .decomposition import ComplexityRegime, DecompositionReport, decompose, run_regime, run_replications
from .evaluation import (
    AE_GRID,
    CHOSE_AE,
    CHOSE_HE,
    HE_GRID,
    NO_HETEROGENEITY,
    MetricsReport,
    SelectionDecision,
    TuningResult,
    cv_tune,
    evaluate,
    heterogeneity_gate,
    regret,
    s_squared,
    select_estimator,
    transform_outcome,
)
from .exceptions import (
    ConvergenceError,
    DegenerateDataError,
    EmptyArmError,
    HonestForestError,
    ParameterError,
    SchemaError,
    SingularSystemError,
    UnsupportedOperationError,
)
from .forest import ADAPTIVE, HONEST, CausalForest, Forest, ForestConfig, HonestyMode, fit_forest
from .lasso import HonestLasso, fit_lasso
from .stylized import StylizedConfig, mc_bias_suite
from .tree import CausalTree, Tree, TreeGrowConfig, grow_tree

__version__ = "0.1.0"

__all__ = [
    "ADAPTIVE",
    "AE_GRID",
    "CHOSE_AE",
    "CHOSE_HE",
    "CausalForest",
    "CausalTree",
    "ComplexityRegime",
    "ConvergenceError",
    "Dataset",
    "DecompositionReport",
    "DegenerateDataError",
    "DgpSpec",
    "EmptyArmError",
    "Forest",
    "ForestConfig",
    "HE_GRID",
    "HONEST",
    "HonestForestError",
    "HonestLasso",
    "HonestyMode",
    "MetricsReport",
    "NO_HETEROGENEITY",
    "ParameterError",
    "SchemaError",
    "SelectionDecision",
    "SingularSystemError",
    "StylizedConfig",
    "Tree",
    "TreeGrowConfig",
    "TuningResult",
    "UnsupportedOperationError",
    "cv_tune",
    "decompose",
    "evaluate",
    "fit_forest",
    "fit_lasso",
    "generate_dataset",
    "grow_tree",
    "heterogeneity_gate",
    "load_csv",
    "mc_bias_suite",
    "regret",
    "run_regime",
    "run_replications",
    "s_squared",
    "save_csv",
    "select_estimator",
    "snr",
    "split_train_test",
    "transform_outcome",
]
