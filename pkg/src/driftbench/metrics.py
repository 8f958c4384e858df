"""Evaluation metrics normalized by the control limit range.

Every residual/width comparison is expressed relative to CLR = ucl - lcl,
so models on different quality targets score on one scale. Tier
boundaries are inclusive on the lower tier: a residual exactly at CLR/4
is still Good, exactly at CLR/2 still Mediocre; widths at CLR/2 and CLR
likewise.
"""

from __future__ import annotations

import enum
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .conformal import Decision, PredictionInterval, decision as interval_decision
from .datagen import ControlLimits


class PointTier(enum.IntEnum):
    """Ordered quality of a prediction or interval width (lower is better)."""

    GOOD = 0
    MEDIOCRE = 1
    POOR = 2

    @property
    def label(self) -> str:
        return self.name.lower()


class DetectionMode(enum.Enum):
    """How out-of-control events are flagged."""

    POINT = "point"
    INTERVAL = "interval"


@dataclass(frozen=True)
class TierReport:
    """Counts and fractions of each tier over n classified records."""

    good: int
    mediocre: int
    poor: int

    @property
    def n(self) -> int:
        return self.good + self.mediocre + self.poor

    def count(self, tier: PointTier) -> int:
        return (self.good, self.mediocre, self.poor)[tier]

    def fraction(self, tier: PointTier) -> float:
        if self.n == 0:
            raise ValueError("empty tier report has no fractions")
        return self.count(tier) / self.n

    @property
    def fractions(self) -> dict[str, float]:
        return {t.label: self.fraction(t) for t in PointTier}

    def to_dict(self) -> dict:
        return {
            "counts": {t.label: self.count(t) for t in PointTier},
            "fractions": self.fractions,
            "n": self.n,
        }


@dataclass(frozen=True)
class BinStat:
    """One conditional-coverage bin: target range, coverage, point RMSE."""

    target_range: tuple[float, float]
    coverage: float
    rmse: float
    n: int


@dataclass(frozen=True)
class ConditionalReport:
    """Per-quantile-bin coverage and RMSE, bins ascending in target."""

    bins: tuple[BinStat, ...]

    @property
    def n(self) -> int:
        return sum(b.n for b in self.bins)

    def weighted_coverage(self) -> float:
        return sum(b.coverage * b.n for b in self.bins) / self.n

    def to_dict(self) -> dict:
        return {
            "bins": [
                {
                    "target_range": list(b.target_range),
                    "coverage": b.coverage,
                    "rmse": b.rmse,
                    "n": b.n,
                }
                for b in self.bins
            ]
        }


def normalized_residual(actual: float, predicted: float, cl: ControlLimits) -> float:
    """|actual - predicted| / CLR."""
    if cl.clr <= 0:
        raise ValueError("control limit range must be positive")
    return abs(actual - predicted) / cl.clr


def classify_point(abs_residual: float, clr: float) -> PointTier:
    """Good <= CLR/4 < Mediocre <= CLR/2 < Poor."""
    if abs_residual < 0:
        raise ValueError("absolute residual cannot be negative")
    if clr <= 0:
        raise ValueError("control limit range must be positive")
    if abs_residual <= clr / 4.0:
        return PointTier.GOOD
    if abs_residual <= clr / 2.0:
        return PointTier.MEDIOCRE
    return PointTier.POOR


def classify_width(width: float, clr: float) -> PointTier:
    """Good <= CLR/2 < Mediocre <= CLR < Poor."""
    if width < 0:
        raise ValueError("interval width cannot be negative")
    if clr <= 0:
        raise ValueError("control limit range must be positive")
    if width <= clr / 2.0:
        return PointTier.GOOD
    if width <= clr:
        return PointTier.MEDIOCRE
    return PointTier.POOR


def tier_report(tiers: Sequence[PointTier]) -> TierReport:
    """Aggregate individual tier labels into counts."""
    counts = {t: 0 for t in PointTier}
    for t in tiers:
        counts[t] += 1
    return TierReport(good=counts[PointTier.GOOD],
                      mediocre=counts[PointTier.MEDIOCRE],
                      poor=counts[PointTier.POOR])


def coverage(intervals: Sequence[PredictionInterval], actuals: Sequence[float]) -> float:
    """Fraction of actuals inside their interval, endpoints inclusive."""
    if len(intervals) != len(actuals):
        raise ValueError("intervals and actuals must have equal length")
    if not intervals:
        raise ValueError("coverage of an empty log is undefined")
    hits = sum(1 for iv, a in zip(intervals, actuals) if iv.lower <= a <= iv.upper)
    return hits / len(intervals)


def mean_width_ratio(intervals: Sequence[PredictionInterval], cl: ControlLimits) -> float:
    """Mean interval width divided by CLR."""
    if not intervals:
        raise ValueError("width ratio of an empty log is undefined")
    if cl.clr <= 0:
        raise ValueError("control limit range must be positive")
    return float(np.mean([iv.width for iv in intervals])) / cl.clr


def rmse(predicted: Sequence[float], actuals: Sequence[float]) -> float:
    predicted = np.asarray(predicted, dtype=float)
    actuals = np.asarray(actuals, dtype=float)
    if predicted.shape != actuals.shape:
        raise ValueError("predicted and actuals must have equal length")
    if predicted.size == 0:
        raise ValueError("rmse of an empty log is undefined")
    return float(np.sqrt(np.mean((predicted - actuals) ** 2)))


def rmse_ratio(predicted: Sequence[float], actuals: Sequence[float],
               cl: ControlLimits) -> float:
    return rmse(predicted, actuals) / cl.clr


def bin_sizes(n: int, n_bins: int) -> list[int]:
    """Near-equal bin sizes; the remainder goes to the lowest-target bins."""
    base, rem = divmod(n, n_bins)
    return [base + 1 if i < rem else base for i in range(n_bins)]


def conditional_report(intervals: Sequence[PredictionInterval],
                       points: Sequence[float],
                       actuals: Sequence[float],
                       n_bins: int = 20) -> ConditionalReport:
    """Coverage and point RMSE inside ascending target-quantile bins."""
    n = len(actuals)
    if not (len(intervals) == len(points) == n):
        raise ValueError("intervals, points, actuals must have equal length")
    if n < n_bins:
        raise ValueError(f"need at least {n_bins} records for {n_bins} bins, got {n}")
    actuals = np.asarray(actuals, dtype=float)
    points = np.asarray(points, dtype=float)
    order = np.argsort(actuals, kind="stable")
    sizes = bin_sizes(n, n_bins)
    bins = []
    start = 0
    for size in sizes:
        idx = order[start:start + size]
        start += size
        a = actuals[idx]
        hits = sum(1 for i in idx if intervals[i].lower <= actuals[i] <= intervals[i].upper)
        bins.append(BinStat(
            target_range=(float(a.min()), float(a.max())),
            coverage=hits / size,
            rmse=float(np.sqrt(np.mean((points[idx] - a) ** 2))),
            n=size,
        ))
    return ConditionalReport(bins=tuple(bins))


def ooc_mask(actuals: Sequence[float], cl: ControlLimits) -> np.ndarray:
    """True where the actual value lies outside [lcl, ucl]."""
    a = np.asarray(actuals, dtype=float)
    return (a < cl.lcl) | (a > cl.ucl)


def ooc_sensitivity(predictions, actuals: Sequence[float], cl: ControlLimits,
                    mode: DetectionMode) -> float:
    """True-positive rate of out-of-control detection.

    `predictions` is a sequence of point values in POINT mode, or of
    PredictionInterval in INTERVAL mode (flagged when the decision is
    anything but in-control). Raises if no actual OOC event exists.
    """
    actual_ooc = ooc_mask(actuals, cl)
    n_events = int(actual_ooc.sum())
    if n_events == 0:
        raise ValueError("no actual out-of-control events; sensitivity undefined")
    if len(predictions) != len(actuals):
        raise ValueError("predictions and actuals must have equal length")
    if mode is DetectionMode.POINT:
        p = np.asarray(predictions, dtype=float)
        flagged = (p < cl.lcl) | (p > cl.ucl)
    else:
        flagged = np.array(
            [interval_decision(iv, cl) is not Decision.IN_CONTROL for iv in predictions]
        )
    return float((flagged & actual_ooc).sum() / n_events)


def relative_to_baseline(report: TierReport, baseline: TierReport) -> dict[str, float | None]:
    """Per-tier 100 * (strategy fraction / baseline fraction).

    A tier absent from the baseline yields None for that tier rather than
    an error.
    """
    out: dict[str, float | None] = {}
    for tier in PointTier:
        base = baseline.fraction(tier)
        if base == 0.0:
            out[tier.label] = None
        else:
            out[tier.label] = 100.0 * report.fraction(tier) / base
    return out
