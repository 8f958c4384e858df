"""CV+ conformal regression on top of the forest learner.

Training data is shuffled into K near-equal folds; each fold model trains
on the complement, and every training point gets a nonconformity score
|y_i - mu_{-k(i)}(x_i)| from the model that never saw it. Interval
endpoints at a new x are order statistics of {mu_{-k(i)}(x) -/+ R_i}:
the floor(alpha*(n+1))-th smallest on the low side and the
ceil((1-alpha)*(n+1))-th smallest on the high side, indices clamped to
[1, n]. No separate calibration set is held out, so all data informs
both the fold models and the scores.

Point predictions come from a model fit on all data; they are reported
as-is and are not guaranteed to lie inside the interval.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import forest
from .datagen import ControlLimits
from .forest import ForestModel, Hyperparams
from .seeding import derive_seed


@dataclass(frozen=True)
class PredictionInterval:
    """[lower, upper] band plus the full-data point prediction."""

    lower: float
    upper: float
    point: float

    def __post_init__(self) -> None:
        if self.lower > self.upper:
            raise ValueError(f"lower {self.lower} exceeds upper {self.upper}")

    @property
    def width(self) -> float:
        return self.upper - self.lower


class Decision(enum.Enum):
    """Interval-vs-control-limit verdict for a predicted batch."""

    IN_CONTROL = "in_control"
    OUT_OF_CONTROL = "out_of_control"
    WARNING = "warning"


@dataclass(frozen=True)
class CvPlusModel:
    """K fold models, their out-of-fold scores, and the full-data model."""

    fold_models: tuple[ForestModel, ...]
    fold_assignment: np.ndarray  # fold_assignment[i] = fold of training point i
    scores: np.ndarray  # nonconformity |y_i - mu_{-k(i)}(x_i)|
    full_model: ForestModel
    alpha_default: float = 0.1

    def __post_init__(self) -> None:
        if len(self.scores) != len(self.fold_assignment):
            raise ValueError("one score per training point required")
        if np.any(self.scores < 0):
            raise ValueError("nonconformity scores must be non-negative")
        counts = np.bincount(self.fold_assignment, minlength=len(self.fold_models))
        if counts.max() - counts.min() > 1:
            raise ValueError("fold sizes must differ by at most 1")
        if not (0.0 < self.alpha_default < 1.0):
            raise ValueError("alpha_default must lie in (0, 1)")

    @property
    def n_train(self) -> int:
        return len(self.scores)


def fit_cvplus(X, y, hp: Hyperparams, k_folds: int = 5, seed: int = 0,
               alpha_default: float = 0.1) -> CvPlusModel:
    """Fit the CV+ construction; deterministic under (inputs, seed)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if k_folds < 2:
        raise ValueError("k_folds must be >= 2")
    if n < k_folds:
        raise ValueError(f"need at least {k_folds} training points, got {n}")
    folds = forest.kfold_indices(n, k_folds, derive_seed(seed, "folds"))
    fold_assignment = np.empty(n, dtype=np.int64)
    for f, idx in enumerate(folds):
        fold_assignment[idx] = f
    fold_models = []
    scores = np.empty(n)
    for f, idx in enumerate(folds):
        mask = np.ones(n, dtype=bool)
        mask[idx] = False
        model = forest.fit(X[mask], y[mask], hp, derive_seed(seed, "fold", f))
        fold_models.append(model)
        scores[idx] = np.abs(y[idx] - forest.predict_many(model, X[idx]))
    full_model = forest.fit(X, y, hp, derive_seed(seed, "full"))
    return CvPlusModel(
        fold_models=tuple(fold_models),
        fold_assignment=fold_assignment,
        scores=scores,
        full_model=full_model,
        alpha_default=alpha_default,
    )


def interval_bounds(fold_values: np.ndarray, scores: np.ndarray,
                    alpha: float) -> tuple[float, float]:
    """Order-statistic endpoints from per-point fold predictions and scores."""
    n = len(scores)
    lo_idx = max(1, math.floor(alpha * (n + 1)))
    hi_idx = min(n, math.ceil((1.0 - alpha) * (n + 1)))
    lower = float(np.sort(fold_values - scores)[lo_idx - 1])
    upper = float(np.sort(fold_values + scores)[hi_idx - 1])
    return lower, upper


def predict_interval(cm: CvPlusModel, x, alpha: float | None = None) -> PredictionInterval:
    """CV+ interval at confidence 1-alpha, with the full-model point."""
    if alpha is None:
        alpha = cm.alpha_default
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    per_fold = np.array([forest.predict_many(m, x)[0] for m in cm.fold_models])
    fold_values = per_fold[cm.fold_assignment]
    lower, upper = interval_bounds(fold_values, cm.scores, alpha)
    if lower > upper:
        # Only reachable for alpha > 0.5 on spread-out scores; the interval
        # would be empty, which the contract cannot represent.
        raise ValueError(f"alpha={alpha} yields an empty interval for n={cm.n_train}")
    point = forest.predict(cm.full_model, x[0])
    return PredictionInterval(lower=lower, upper=upper, point=point)


def predict_intervals(cm: CvPlusModel, X, alpha: float | None = None) -> list[PredictionInterval]:
    """Vectorized batch variant of :func:`predict_interval`."""
    if alpha is None:
        alpha = cm.alpha_default
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    X = np.asarray(X, dtype=np.float64)
    per_fold = np.stack([forest.predict_many(m, X) for m in cm.fold_models])
    points = forest.predict_many(cm.full_model, X)
    out = []
    for i in range(X.shape[0]):
        fold_values = per_fold[:, i][cm.fold_assignment]
        lower, upper = interval_bounds(fold_values, cm.scores, alpha)
        if lower > upper:
            raise ValueError(f"alpha={alpha} yields an empty interval for n={cm.n_train}")
        out.append(PredictionInterval(lower=lower, upper=upper, point=float(points[i])))
    return out


def decision(interval: PredictionInterval, cl: ControlLimits) -> Decision:
    """Classify a prediction against the control limits.

    In-control requires the whole interval inside [lcl, ucl]; a point
    prediction outside the limits is out-of-control; anything else (point
    inside but interval crossing a limit) is a warning.
    """
    if interval.lower >= cl.lcl and interval.upper <= cl.ucl:
        return Decision.IN_CONTROL
    if interval.point < cl.lcl or interval.point > cl.ucl:
        return Decision.OUT_OF_CONTROL
    return Decision.WARNING
