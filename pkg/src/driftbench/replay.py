"""Chronological replay of retraining policies over a generated dataset.

The engine walks the dataset in batch order: it trains on the first
`warmup` batches, predicts each later batch before its target is
revealed, and retrains after every `cadence` newly revealed batches on
either the full history so far (expanding window) or the most recent
fixed-size slice. Hyperparameters are tuned once on the warmup window
(frozen) or re-searched at every retraining (retune); the model is either
a plain forest (point predictions) or a CV+ wrapper that also logs
prediction intervals and control-limit decisions.

Everything is deterministic given (dataset, policy): tuning, fitting and
fold seeds derive from the policy seed and the retraining-event number,
never from wall time.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from . import conformal, forest, metrics
from .conformal import Decision, PredictionInterval
from .datagen import ControlLimits, Dataset, DriftScenario, generate
from .forest import Hyperparams, SearchSpace, DEFAULT_SEARCH_SPACE
from .metrics import DetectionMode, PointTier, TierReport
from .seeding import derive_seed

DEFAULT_WARMUP = 100


@dataclass(frozen=True)
class Fixed:
    """Sliding window: retrain on the most recent `size` batches."""

    size: int

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValueError("fixed window size must be >= 1")

    def label(self) -> str:
        return f"fixed{self.size}"


@dataclass(frozen=True)
class Expanding:
    """Retrain on all history to date."""

    def label(self) -> str:
        return "expanding"


TrainWindow = Union[Fixed, Expanding]


class HpPolicy(enum.Enum):
    FROZEN = "frozen"
    RETUNE = "retune"


@dataclass(frozen=True)
class PointKind:
    """Plain forest: point predictions only."""

    def label(self) -> str:
        return "point"


@dataclass(frozen=True)
class ConformalKind:
    """CV+ wrapper: points plus intervals at confidence 1-alpha."""

    alpha: float = 0.1
    k_folds: int = 5

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")

    def label(self) -> str:
        return f"conformal{self.alpha:g}"


ModelKind = Union[PointKind, ConformalKind]


@dataclass(frozen=True)
class ReplayPolicy:
    """One retraining strategy: cadence x window x tuning x model kind.

    `cadence=None` means never retrain (the baseline rows of the
    benchmark matrix).
    """

    cadence: int | None
    window: TrainWindow
    hp_policy: HpPolicy
    model_kind: ModelKind
    warmup: int = DEFAULT_WARMUP
    seed: int = 0
    search_space: SearchSpace = DEFAULT_SEARCH_SPACE
    cv_folds: int = 5

    def __post_init__(self) -> None:
        if self.cadence is not None and self.cadence < 1:
            raise ValueError("cadence must be a positive batch count or None")
        if self.warmup < 1:
            raise ValueError("warmup must be >= 1")
        if isinstance(self.window, Fixed) and self.window.size > self.warmup:
            raise ValueError("fixed window size cannot exceed warmup")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")

    def to_dict(self) -> dict:
        return {
            "cadence": self.cadence,
            "window": ({"kind": "fixed", "size": self.window.size}
                       if isinstance(self.window, Fixed) else {"kind": "expanding"}),
            "hp_policy": self.hp_policy.value,
            "model_kind": ({"kind": "conformal", "alpha": self.model_kind.alpha,
                            "k_folds": self.model_kind.k_folds}
                           if isinstance(self.model_kind, ConformalKind)
                           else {"kind": "point"}),
            "warmup": self.warmup,
            "seed": self.seed,
            "search_space": {
                "n_estimators_range": list(self.search_space.n_estimators_range),
                "max_depth_range": list(self.search_space.max_depth_range),
                "include_unbounded_depth": self.search_space.include_unbounded_depth,
                "n_iter": self.search_space.n_iter,
            },
            "cv_folds": self.cv_folds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReplayPolicy":
        window_d = d.get("window", {"kind": "expanding"})
        window: TrainWindow
        if window_d["kind"] == "fixed":
            window = Fixed(size=window_d["size"])
        elif window_d["kind"] == "expanding":
            window = Expanding()
        else:
            raise ValueError(f"unknown window kind {window_d['kind']!r}")
        kind_d = d.get("model_kind", {"kind": "point"})
        kind: ModelKind
        if kind_d["kind"] == "point":
            kind = PointKind()
        elif kind_d["kind"] == "conformal":
            kind = ConformalKind(alpha=kind_d.get("alpha", 0.1),
                                 k_folds=kind_d.get("k_folds", 5))
        else:
            raise ValueError(f"unknown model kind {kind_d['kind']!r}")
        space_d = d.get("search_space")
        space = DEFAULT_SEARCH_SPACE if space_d is None else SearchSpace(
            n_estimators_range=tuple(space_d["n_estimators_range"]),
            max_depth_range=tuple(space_d["max_depth_range"]),
            include_unbounded_depth=space_d.get("include_unbounded_depth", True),
            n_iter=space_d["n_iter"],
        )
        cadence = d.get("cadence")
        if cadence == "never":
            cadence = None
        return cls(
            cadence=cadence,
            window=window,
            hp_policy=HpPolicy(d.get("hp_policy", "frozen")),
            model_kind=kind,
            warmup=d.get("warmup", DEFAULT_WARMUP),
            seed=d.get("seed", 0),
            search_space=space,
            cv_folds=d.get("cv_folds", 5),
        )


@dataclass(frozen=True)
class RetrainEvent:
    """One scheduled retraining: when, on which slice, with which settings."""

    at_index: int
    window_start: int
    window_end: int
    hp_used: Hyperparams
    train_seconds: float


@dataclass(frozen=True)
class ReplayRecord:
    """Prediction log entry for one post-warmup batch."""

    index: int
    actual: float
    point: float
    lower: float | None
    upper: float | None
    tier: PointTier
    decision: Decision | None


@dataclass(frozen=True)
class ReplayAggregates:
    """Run-level metrics over all post-warmup records."""

    n: int
    tier_report: TierReport
    rmse: float
    rmse_ratio: float
    n_ooc_actual: int
    coverage: float | None = None
    mean_width_ratio: float | None = None
    sensitivity_point: float | None = None
    sensitivity_interval: float | None = None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "tier": self.tier_report.to_dict(),
            "rmse": self.rmse,
            "rmse_ratio": self.rmse_ratio,
            "n_ooc_actual": self.n_ooc_actual,
            "coverage": self.coverage,
            "mean_width_ratio": self.mean_width_ratio,
            "sensitivity_point": self.sensitivity_point,
            "sensitivity_interval": self.sensitivity_interval,
        }


@dataclass(frozen=True)
class ReplayReport:
    """Per-batch records, retraining events and aggregates of one replay."""

    records: tuple[ReplayRecord, ...]
    retrain_events: tuple[RetrainEvent, ...]
    aggregates: ReplayAggregates
    limits: ControlLimits
    policy: ReplayPolicy
    total_train_seconds: float


def _tune(X, y, policy: ReplayPolicy, event: int) -> Hyperparams:
    result = forest.random_search_cv(
        X, y, policy.search_space, policy.cv_folds,
        derive_seed(policy.seed, "tune", event))
    return result.hyperparams


def _fit(X, y, hp: Hyperparams, policy: ReplayPolicy, event: int):
    fit_seed = derive_seed(policy.seed, "fit", event)
    if isinstance(policy.model_kind, ConformalKind):
        return conformal.fit_cvplus(X, y, hp, policy.model_kind.k_folds, fit_seed,
                                    alpha_default=policy.model_kind.alpha)
    return forest.fit(X, y, hp, fit_seed)


def _window_bounds(policy: ReplayPolicy, end: int) -> tuple[int, int]:
    if isinstance(policy.window, Fixed):
        start = end - policy.window.size
        assert start >= 0, "fixed window underruns history"
        return start, end
    return 0, end


def run_replay(dataset: Dataset, policy: ReplayPolicy) -> ReplayReport:
    """Replay `policy` over `dataset`; deterministic in its arguments."""
    n = len(dataset)
    if n <= policy.warmup:
        raise ValueError(f"dataset has {n} batches; needs more than warmup={policy.warmup}")
    X, y = dataset.features, dataset.targets
    limits = dataset.limits
    is_conformal = isinstance(policy.model_kind, ConformalKind)
    total_train = 0.0

    t0 = time.perf_counter()
    lo, hi = _window_bounds(policy, policy.warmup)
    hp = _tune(X[lo:hi], y[lo:hi], policy, event=0)
    model = _fit(X[lo:hi], y[lo:hi], hp, policy, event=0)
    total_train += time.perf_counter() - t0

    records: list[ReplayRecord] = []
    events: list[RetrainEvent] = []
    revealed_since = 0
    event_no = 0
    for t in range(policy.warmup, n):
        if is_conformal:
            interval = conformal.predict_interval(model, X[t])
            point = interval.point
            lower, upper = interval.lower, interval.upper
            verdict = conformal.decision(interval, limits)
        else:
            point = forest.predict(model, X[t])
            lower = upper = None
            verdict = None
        actual = float(y[t])
        tier = metrics.classify_point(abs(actual - point), limits.clr)
        records.append(ReplayRecord(index=t, actual=actual, point=point,
                                    lower=lower, upper=upper, tier=tier,
                                    decision=verdict))
        revealed_since += 1
        if policy.cadence is not None and revealed_since == policy.cadence:
            event_no += 1
            end = t + 1
            lo, hi = _window_bounds(policy, end)
            t1 = time.perf_counter()
            if policy.hp_policy is HpPolicy.RETUNE:
                hp = _tune(X[lo:hi], y[lo:hi], policy, event=event_no)
            model = _fit(X[lo:hi], y[lo:hi], hp, policy, event=event_no)
            dt = time.perf_counter() - t1
            total_train += dt
            events.append(RetrainEvent(at_index=end, window_start=lo,
                                       window_end=hi, hp_used=hp,
                                       train_seconds=dt))
            revealed_since = 0

    aggregates = _aggregate(records, limits, is_conformal)
    return ReplayReport(records=tuple(records), retrain_events=tuple(events),
                        aggregates=aggregates, limits=limits, policy=policy,
                        total_train_seconds=total_train)


def _aggregate(records: list[ReplayRecord], limits: ControlLimits,
               is_conformal: bool) -> ReplayAggregates:
    actuals = [r.actual for r in records]
    points = [r.point for r in records]
    tier = metrics.tier_report([r.tier for r in records])
    n_ooc = int(metrics.ooc_mask(actuals, limits).sum())
    cov = widths = sens_point = sens_interval = None
    if n_ooc > 0:
        sens_point = metrics.ooc_sensitivity(points, actuals, limits,
                                             DetectionMode.POINT)
    if is_conformal:
        intervals = [PredictionInterval(lower=r.lower, upper=r.upper, point=r.point)
                     for r in records]
        cov = metrics.coverage(intervals, actuals)
        widths = metrics.mean_width_ratio(intervals, limits)
        if n_ooc > 0:
            sens_interval = metrics.ooc_sensitivity(intervals, actuals, limits,
                                                    DetectionMode.INTERVAL)
    return ReplayAggregates(
        n=len(records), tier_report=tier,
        rmse=metrics.rmse(points, actuals),
        rmse_ratio=metrics.rmse_ratio(points, actuals, limits),
        n_ooc_actual=n_ooc, coverage=cov, mean_width_ratio=widths,
        sensitivity_point=sens_point, sensitivity_interval=sens_interval,
    )


# ---------------------------------------------------------------------------
# Grid execution.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Cartesian benchmark matrix over scenarios and policy axes."""

    scenarios: tuple[DriftScenario, ...]
    cadences: tuple[int | None, ...]
    windows: tuple[TrainWindow, ...]
    hp_policies: tuple[HpPolicy, ...]
    model_kinds: tuple[ModelKind, ...]
    replications: int = 1
    warmup: int = DEFAULT_WARMUP
    search_space: SearchSpace = DEFAULT_SEARCH_SPACE
    cv_folds: int = 5
    policy_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("scenarios", "cadences", "windows", "hp_policies", "model_kinds"):
            if not getattr(self, name):
                raise ValueError(f"grid axis {name} is empty")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")


@dataclass(frozen=True)
class CellKey:
    """Identity of one grid cell (one replication of one combination)."""

    scenario_index: int
    scenario_kind: str
    cadence: int | None
    window: str
    hp_policy: str
    model_kind: str
    replication: int

    def run_name(self) -> str:
        cad = "never" if self.cadence is None else str(self.cadence)
        return (f"s{self.scenario_index}-{self.scenario_kind}_cad-{cad}_"
                f"{self.window}_{self.hp_policy}_{self.model_kind}_rep{self.replication}")


@dataclass(frozen=True)
class CellResult:
    key: CellKey
    report: ReplayReport | None
    error: str | None

    @property
    def ok(self) -> bool:
        return self.error is None


def _grid_cells(grid: GridSpec) -> list[tuple[CellKey, DriftScenario, ReplayPolicy]]:
    cells = []
    for si, scenario in enumerate(grid.scenarios):
        for rep in range(grid.replications):
            scen = replace(scenario, seed=derive_seed(scenario.seed, "replication", rep))
            pol_seed = derive_seed(grid.policy_seed, "replication", rep)
            for cadence in grid.cadences:
                for window in grid.windows:
                    for hp_policy in grid.hp_policies:
                        for kind in grid.model_kinds:
                            policy = ReplayPolicy(
                                cadence=cadence, window=window,
                                hp_policy=hp_policy, model_kind=kind,
                                warmup=grid.warmup, seed=pol_seed,
                                search_space=grid.search_space,
                                cv_folds=grid.cv_folds,
                            )
                            key = CellKey(
                                scenario_index=si,
                                scenario_kind=scenario.kind.value,
                                cadence=cadence,
                                window=window.label(),
                                hp_policy=hp_policy.value,
                                model_kind=kind.label(),
                                replication=rep,
                            )
                            cells.append((key, scen, policy))
    return cells


def _run_cell(args: tuple[CellKey, DriftScenario, ReplayPolicy]) -> CellResult:
    key, scenario, policy = args
    try:
        dataset = generate(scenario)
        report = run_replay(dataset, policy)
        return CellResult(key=key, report=report, error=None)
    except Exception as exc:  # propagate with run identity, do not abort grid
        return CellResult(key=key, report=None, error=f"{type(exc).__name__}: {exc}")


@dataclass(frozen=True)
class GridResult:
    cells: tuple[CellResult, ...]
    summary: tuple[dict, ...]

    @property
    def n_failed(self) -> int:
        return sum(1 for c in self.cells if not c.ok)


def run_grid(grid: GridSpec, jobs: int = 1) -> GridResult:
    """Execute the full matrix; one failed cell never aborts the others."""
    cells = _grid_cells(grid)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]
    results.sort(key=lambda c: (c.key.scenario_index, c.key.replication,
                                _cadence_sort(c.key.cadence), c.key.window,
                                c.key.hp_policy, c.key.model_kind))
    return GridResult(cells=tuple(results), summary=tuple(summarize_grid(results)))


def _cadence_sort(c: int | None) -> float:
    return float("inf") if c is None else float(c)


def summarize_grid(results: list[CellResult]) -> list[dict]:
    """One row per grid combination, replications averaged.

    Baseline-relative tier percentages compare each cell against the
    never-retrain cell of the same (scenario, window, hp_policy,
    model_kind, replication) slice, when that cell exists and succeeded.
    """
    by_key = {c.key: c for c in results}
    combos: dict[tuple, list[CellResult]] = {}
    for c in results:
        combo = (c.key.scenario_index, c.key.scenario_kind, c.key.cadence,
                 c.key.window, c.key.hp_policy, c.key.model_kind)
        combos.setdefault(combo, []).append(c)

    def mean_or_none(values: list[float | None]) -> float | None:
        vals = [v for v in values if v is not None]
        return float(np.mean(vals)) if vals else None

    rows = []
    for combo in sorted(combos, key=lambda c: (c[0], _cadence_sort(c[2]), c[3], c[4], c[5])):
        cells = combos[combo]
        ok_cells = [c for c in cells if c.ok]
        si, kind, cadence, window, hp_policy, model_kind = combo
        row: dict = {
            "scenario": f"s{si}-{kind}",
            "cadence": "never" if cadence is None else cadence,
            "window": window,
            "hp_policy": hp_policy,
            "model_kind": model_kind,
            "status": "ok" if len(ok_cells) == len(cells) else
                      f"failed({len(cells) - len(ok_cells)}/{len(cells)})",
        }
        if not ok_cells:
            rows.append(row)
            continue
        reports = [c.report for c in ok_cells]
        for tier in PointTier:
            row[f"{tier.label}_frac"] = float(np.mean(
                [r.aggregates.tier_report.fraction(tier) for r in reports]))
        rel: dict[str, list[float | None]] = {t.label: [] for t in PointTier}
        for c in ok_cells:
            base_key = replace(c.key, cadence=None)
            base = by_key.get(base_key)
            if base is not None and base.ok:
                ratios = metrics.relative_to_baseline(
                    c.report.aggregates.tier_report,
                    base.report.aggregates.tier_report)
                for t in PointTier:
                    rel[t.label].append(ratios[t.label])
        for t in PointTier:
            row[f"pct_of_baseline_{t.label}"] = mean_or_none(rel[t.label])
        row["coverage"] = mean_or_none([r.aggregates.coverage for r in reports])
        row["width_ratio"] = mean_or_none(
            [r.aggregates.mean_width_ratio for r in reports])
        if model_kind.startswith("conformal"):
            row["sensitivity"] = mean_or_none(
                [r.aggregates.sensitivity_interval for r in reports])
        else:
            row["sensitivity"] = mean_or_none(
                [r.aggregates.sensitivity_point for r in reports])
        row["rmse_ratio"] = float(np.mean([r.aggregates.rmse_ratio for r in reports]))
        row["train_seconds"] = float(np.mean([r.total_train_seconds for r in reports]))
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Window-size and sweep diagnostics.
# ---------------------------------------------------------------------------

def learning_curve(dataset: Dataset, sizes, hp: Hyperparams, k: int = 5,
                   seed: int = 0) -> dict[int, float]:
    """Mean k-fold CV RMSE when training on the first `size` batches."""
    n = len(dataset)
    out: dict[int, float] = {}
    for size in sorted(int(s) for s in sizes):
        if size > n:
            raise ValueError(f"learning-curve size {size} exceeds dataset length {n}")
        folds = forest.kfold_indices(size, k, derive_seed(seed, "curve", size))
        out[size] = forest.cv_rmse(dataset.features[:size], dataset.targets[:size],
                                   hp, folds, derive_seed(seed, "curve_fit", size))
    return out


def coverage_width_sweep(dataset: Dataset, train_sizes, alphas,
                         hp: Hyperparams, k_folds: int = 5, n_test: int = 200,
                         seed: int = 0) -> list[dict]:
    """Coverage and width-ratio table over train-size x alpha.

    Trains CV+ on chronological prefixes and evaluates on the trailing
    `n_test` batches, which never overlap the largest prefix.
    """
    n = len(dataset)
    sizes = sorted(int(s) for s in train_sizes)
    if sizes[-1] + n_test > n:
        raise ValueError(
            f"need {sizes[-1] + n_test} batches for max train size plus "
            f"{n_test} test points, dataset has {n}")
    X_test = dataset.features[n - n_test:]
    y_test = dataset.targets[n - n_test:]
    rows = []
    for size in sizes:
        cm = conformal.fit_cvplus(dataset.features[:size], dataset.targets[:size],
                                  hp, k_folds, derive_seed(seed, "sweep", size))
        for alpha in alphas:
            intervals = conformal.predict_intervals(cm, X_test, alpha)
            rows.append({
                "train_size": size,
                "alpha": float(alpha),
                "coverage": metrics.coverage(intervals, y_test),
                "mean_width_ratio": metrics.mean_width_ratio(intervals, dataset.limits),
            })
    return rows
