"""driftbench: retraining-strategy and conformal-uncertainty benchmarks
on synthetic drifting batch-manufacturing data."""

__version__ = "0.1.0"

from .datagen import (Batch, ControlLimits, Dataset, DriftKind, DriftScenario,
                      baseline_segment, generate)
from .forest import (ForestModel, Hyperparams, SearchSpace, fit, predict,
                     predict_many, random_search_cv, nested_cv_evaluate)
from .conformal import (CvPlusModel, Decision, PredictionInterval, decision,
                        fit_cvplus, predict_interval)
from .metrics import (DetectionMode, PointTier, TierReport, classify_point,
                      classify_width, coverage, mean_width_ratio,
                      normalized_residual, ooc_sensitivity,
                      relative_to_baseline)
from .pca import PcaModel, block_summaries, fit_pca, project
from .replay import (ConformalKind, Expanding, Fixed, GridSpec, HpPolicy,
                     PointKind, ReplayPolicy, learning_curve, run_grid,
                     run_replay)

__all__ = [
    "Batch", "ControlLimits", "Dataset", "DriftKind", "DriftScenario",
    "baseline_segment", "generate",
    "ForestModel", "Hyperparams", "SearchSpace", "fit", "predict",
    "predict_many", "random_search_cv", "nested_cv_evaluate",
    "CvPlusModel", "Decision", "PredictionInterval", "decision",
    "fit_cvplus", "predict_interval",
    "DetectionMode", "PointTier", "TierReport", "classify_point",
    "classify_width", "coverage", "mean_width_ratio", "normalized_residual",
    "ooc_sensitivity", "relative_to_baseline",
    "PcaModel", "block_summaries", "fit_pca", "project",
    "ConformalKind", "Expanding", "Fixed", "GridSpec", "HpPolicy",
    "PointKind", "ReplayPolicy", "learning_curve", "run_grid", "run_replay",
]
