"""Excess mortality estimation, mortality displacement, and spatial clustering.

The package builds municipality-level no-shock counterfactuals with a
seeded from-scratch random forest, turns them into excess-mortality and
displacement accounting, and maps bivariate spatial autocorrelation of the
excess values with permutation inference. ``excessmort.cli`` exposes the
same pipeline as a command-line tool.
"""

__version__ = "0.1.0"

from .panel import (
    COVARIATE_NAMES,
    DEFAULT_PERIODS,
    Municipality,
    PanelDataset,
    Period,
    TrainingRows,
    assemble_rows,
    death_rate,
    load_panel,
    period_deaths,
)
from .forest import (
    Forest,
    ForestConfig,
    Tree,
    evaluate_mse,
    fit_forest,
    fit_tree,
    load_forest,
    predict_rate,
    predict_rates,
    save_forest,
    split_train_test,
)
from .counterfactual import (
    ExcessEstimate,
    HarvestingSummary,
    aggregate_excess,
    combine_estimates,
    compute_excess,
    excess_by_unit,
    harvesting_summary,
    intuitive_baseline,
    predict_counterfactual,
)
from .spatial import (
    LisaRecord,
    MoranResult,
    SpatialWeights,
    bivariate_lisa,
    build_weights,
    classify_clusters,
    global_bivariate_moran,
    global_moran_test,
    local_bivariate_moran,
    min_connectivity_threshold,
    permutation_pvalues,
    spatial_lag,
    standardize,
    weights_from_matrix,
)
from .synth import RecoveryMetrics, SynthConfig, SynthTruth, evaluate_recovery, generate_panel

__all__ = [
    "COVARIATE_NAMES",
    "DEFAULT_PERIODS",
    "ExcessEstimate",
    "Forest",
    "ForestConfig",
    "HarvestingSummary",
    "LisaRecord",
    "MoranResult",
    "Municipality",
    "PanelDataset",
    "Period",
    "RecoveryMetrics",
    "SpatialWeights",
    "SynthConfig",
    "SynthTruth",
    "Tree",
    "TrainingRows",
    "aggregate_excess",
    "assemble_rows",
    "bivariate_lisa",
    "build_weights",
    "classify_clusters",
    "combine_estimates",
    "compute_excess",
    "death_rate",
    "evaluate_mse",
    "evaluate_recovery",
    "excess_by_unit",
    "fit_forest",
    "fit_tree",
    "generate_panel",
    "global_bivariate_moran",
    "global_moran_test",
    "harvesting_summary",
    "intuitive_baseline",
    "load_forest",
    "load_panel",
    "local_bivariate_moran",
    "min_connectivity_threshold",
    "period_deaths",
    "permutation_pvalues",
    "predict_counterfactual",
    "predict_rate",
    "predict_rates",
    "save_forest",
    "spatial_lag",
    "split_train_test",
    "standardize",
    "weights_from_matrix",
]
