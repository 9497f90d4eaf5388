"""Quantile-aggregated instrumental variables.

Builds a dictionary of fitted conditional quantiles of an endogenous
regressor, aggregates it into a generated instrument (equal, least
squares, ridge, or LASSO weights), and runs standard 2SLS with robust
sandwich inference alongside a distributional control-function estimator,
weak-IV diagnostics, and a Monte Carlo study harness.
"""

from .control_function import ControlVariable, estimate_control, fit_drcf
from .data import Dataset, LoadReport, load_csv, write_csv
from .diagnostics import (
    LABEL_BOTH_WEAK,
    LABEL_DISTRIBUTIONAL,
    LABEL_MEAN_ONLY,
    LABEL_STRONG_MEAN,
    DiagnosticsReport,
    decision_label,
    diagnose,
    distributional_f,
    quantile_joint_f,
)
from .exceptions import (
    ConfigError,
    ConvergenceError,
    DataError,
    DegenerateInstrumentError,
    QlsivError,
    RankDeficientError,
)
from .first_stage import (
    FirstStageFit,
    check_loss,
    fit_first_stage,
    fit_quantile,
    quantile_lp,
)
from .grids import BuiltBasis, InstrumentBasis, QuantileGrid
from .instruments import (
    GeneratedInstrument,
    InstrumentWeights,
    WeightMethod,
    build_instrument,
    cv_folds_assignment,
    lasso_candidate_grid,
    lasso_penalty_max,
    ridge_candidate_grid,
    select_penalty_cv,
    weights_lasso,
    weights_ols,
    weights_ridge,
)
from .iv import (
    IVFit,
    first_stage_f,
    fit_2sls,
    fit_plugin_ols,
    fit_substitute_ols,
    project_regressor,
)
from .simulation import (
    DEFAULT_STEPS,
    ESTIMATOR_IDS,
    DGPSpec,
    ReportRow,
    SimulationReport,
    generate,
    run_study,
    summarize,
)

__version__ = "0.1.0"

__all__ = [
    "BuiltBasis",
    "ConfigError",
    "ControlVariable",
    "ConvergenceError",
    "DataError",
    "Dataset",
    "DegenerateInstrumentError",
    "DiagnosticsReport",
    "DGPSpec",
    "DEFAULT_STEPS",
    "ESTIMATOR_IDS",
    "FirstStageFit",
    "GeneratedInstrument",
    "InstrumentBasis",
    "InstrumentWeights",
    "IVFit",
    "LABEL_BOTH_WEAK",
    "LABEL_DISTRIBUTIONAL",
    "LABEL_MEAN_ONLY",
    "LABEL_STRONG_MEAN",
    "LoadReport",
    "QlsivError",
    "QuantileGrid",
    "RankDeficientError",
    "ReportRow",
    "SimulationReport",
    "WeightMethod",
    "build_instrument",
    "check_loss",
    "cv_folds_assignment",
    "decision_label",
    "diagnose",
    "distributional_f",
    "estimate_control",
    "first_stage_f",
    "fit_2sls",
    "fit_drcf",
    "fit_first_stage",
    "fit_plugin_ols",
    "fit_quantile",
    "fit_substitute_ols",
    "generate",
    "lasso_candidate_grid",
    "lasso_penalty_max",
    "load_csv",
    "project_regressor",
    "quantile_joint_f",
    "quantile_lp",
    "ridge_candidate_grid",
    "run_study",
    "select_penalty_cv",
    "summarize",
    "weights_lasso",
    "weights_ols",
    "weights_ridge",
    "write_csv",
]
