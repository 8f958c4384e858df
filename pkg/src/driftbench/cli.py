"""Command-line entry point: config-driven generation, replays, grids, PCA.

Usage:
    driftbench generate|run|grid|pca --config FILE [--out DIR] [--jobs N]

The config is a single JSON file (see README for the schema). The
environment variable DRIFTBENCH_SEED, when set, overrides every seed in
the config. Exit codes: 0 success, 1 config error, 2 runtime error,
3 partial grid failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from . import __version__, datagen, pca, persist, replay
from .datagen import DriftScenario
from .forest import Hyperparams, SearchSpace
from .replay import (ConformalKind, Expanding, Fixed, GridSpec, HpPolicy,
                     ModelKind, PointKind, ReplayPolicy, TrainWindow)
from .seeding import derive_seed

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_RUNTIME_ERROR = 2
EXIT_PARTIAL_FAILURE = 3

SEED_ENV_VAR = "DRIFTBENCH_SEED"


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    """Parsed config: a scenario plus exactly one of policy/grid."""

    raw: dict
    scenario: DriftScenario | None
    policy: ReplayPolicy | None
    grid: GridSpec | None
    output_dir: Path
    alpha_sweep: list[float] | None
    train_size_sweep: list[int] | None
    dataset_path: Path | None
    n_blocks: int
    n_components: int
    seed_override: int | None


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _parse_scenario(d: dict, seed_override: int | None) -> DriftScenario:
    d = dict(d)
    if seed_override is not None:
        d["seed"] = seed_override
    try:
        return DriftScenario.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"scenario: {exc}") from exc


def _parse_window(d: dict) -> TrainWindow:
    kind = d.get("kind")
    if kind == "fixed":
        _require("size" in d, "window: fixed window requires a size field")
        return Fixed(size=int(d["size"]))
    if kind == "expanding":
        return Expanding()
    raise ConfigError(f"window: unknown kind {kind!r}")


def _parse_model_kind(d: dict) -> ModelKind:
    kind = d.get("kind")
    if kind == "point":
        return PointKind()
    if kind == "conformal":
        return ConformalKind(alpha=float(d.get("alpha", 0.1)),
                             k_folds=int(d.get("k_folds", 5)))
    raise ConfigError(f"model_kind: unknown kind {kind!r}")


def _parse_search_space(d: dict | None) -> SearchSpace | None:
    if d is None:
        return None
    try:
        return SearchSpace(
            n_estimators_range=tuple(d["n_estimators_range"]),
            max_depth_range=tuple(d["max_depth_range"]),
            include_unbounded_depth=bool(d.get("include_unbounded_depth", True)),
            n_iter=int(d["n_iter"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"search_space: {exc}") from exc


def _parse_cadence(v) -> int | None:
    if v is None or v == "never":
        return None
    cadence = int(v)
    _require(cadence >= 1, f"cadence must be positive or 'never', got {v!r}")
    return cadence


def _parse_policy(d: dict, seed_override: int | None) -> ReplayPolicy:
    d = dict(d)
    if seed_override is not None:
        d["seed"] = seed_override
    if "cadence" in d:
        d["cadence"] = _parse_cadence(d["cadence"])
    else:
        raise ConfigError("policy: cadence field is required (use 'never' for none)")
    try:
        return ReplayPolicy.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"policy: {exc}") from exc


def _parse_grid(d: dict, fallback_scenario: dict | None,
                seed_override: int | None) -> GridSpec:
    scen_dicts = d.get("scenarios")
    if not scen_dicts:
        _require(fallback_scenario is not None,
                 "grid: needs a scenarios list or a top-level scenario")
        scen_dicts = [fallback_scenario]
    scenarios = tuple(_parse_scenario(s, seed_override) for s in scen_dicts)
    _require(bool(d.get("cadences")), "grid: cadences axis is empty")
    _require(bool(d.get("windows")), "grid: windows axis is empty")
    _require(bool(d.get("hp_policies")), "grid: hp_policies axis is empty")
    _require(bool(d.get("model_kinds")), "grid: model_kinds axis is empty")
    try:
        space = _parse_search_space(d.get("search_space"))
        return GridSpec(
            scenarios=scenarios,
            cadences=tuple(_parse_cadence(c) for c in d["cadences"]),
            windows=tuple(_parse_window(w) for w in d["windows"]),
            hp_policies=tuple(HpPolicy(p) for p in d["hp_policies"]),
            model_kinds=tuple(_parse_model_kind(m) for m in d["model_kinds"]),
            replications=int(d.get("replications", 1)),
            warmup=int(d.get("warmup", replay.DEFAULT_WARMUP)),
            search_space=space if space is not None else replay.DEFAULT_SEARCH_SPACE,
            cv_folds=int(d.get("cv_folds", 5)),
            policy_seed=(seed_override if seed_override is not None
                         else int(d.get("policy_seed", 0))),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"grid: {exc}") from exc


def load_config(path: str | Path, out_override: str | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")

    seed_override = None
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            seed_override = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from exc

    has_policy = "policy" in raw
    has_grid = "grid" in raw
    _require(not (has_policy and has_grid),
             "config: policy and grid are mutually exclusive")

    scenario = None
    if "scenario" in raw:
        scenario = _parse_scenario(raw["scenario"], seed_override)
    policy = _parse_policy(raw["policy"], seed_override) if has_policy else None
    grid = (_parse_grid(raw["grid"], raw.get("scenario"), seed_override)
            if has_grid else None)

    for name in ("alpha_sweep", "train_size_sweep"):
        if name in raw:
            _require(bool(raw[name]), f"config: {name} must be non-empty when present")
    alpha_sweep = [float(a) for a in raw["alpha_sweep"]] if "alpha_sweep" in raw else None
    size_sweep = ([int(s) for s in raw["train_size_sweep"]]
                  if "train_size_sweep" in raw else None)

    out_dir = Path(out_override) if out_override else Path(raw.get("output_dir", "runs_out"))
    dataset_path = Path(raw["dataset"]) if "dataset" in raw else None
    return ExperimentConfig(
        raw=raw,
        scenario=scenario,
        policy=policy,
        grid=grid,
        output_dir=out_dir,
        alpha_sweep=alpha_sweep,
        train_size_sweep=size_sweep,
        dataset_path=dataset_path,
        n_blocks=int(raw.get("n_blocks", 8)),
        n_components=int(raw.get("n_components", 2)),
        seed_override=seed_override,
    )


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _run_id(config_raw: dict) -> str:
    digest = hashlib.sha256(
        json.dumps(config_raw, sort_keys=True).encode()).hexdigest()[:8]
    return f"{time.strftime('%Y%m%dT%H%M%SZ', time.gmtime())}-{digest}"


def _make_run_dir(base: Path, config_raw: dict) -> Path:
    runs = base / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    run_id = _run_id(config_raw)
    candidate = runs / run_id
    suffix = 1
    while candidate.exists():
        suffix += 1
        candidate = runs / f"{run_id}-{suffix}"
    candidate.mkdir()
    return candidate


def _load_or_generate_dataset(config: ExperimentConfig) -> datagen.Dataset:
    if config.dataset_path is not None:
        if not config.dataset_path.exists():
            raise ConfigError(f"dataset file not found: {config.dataset_path}")
        return datagen.read_dataset_csv(config.dataset_path)
    _require(config.scenario is not None, "config: a scenario (or dataset) is required")
    return datagen.generate(config.scenario)


def cmd_generate(config: ExperimentConfig) -> int:
    _require(config.scenario is not None, "config: generate requires a scenario")
    started = _utc_now()
    dataset = datagen.generate(config.scenario)
    out_dir = _make_run_dir(config.output_dir, config.raw)
    csv_path = out_dir / "dataset.csv"
    sidecar = out_dir / "dataset.json"
    datagen.write_dataset_csv(dataset, csv_path, sidecar)
    persist.write_manifest(out_dir, config.raw, __version__,
                           config.scenario.seed, started, _utc_now(),
                           [csv_path, sidecar])
    print(out_dir)
    return EXIT_OK


def cmd_run(config: ExperimentConfig) -> int:
    _require(config.policy is not None, "config: run requires a policy")
    started = _utc_now()
    dataset = _load_or_generate_dataset(config)
    report = replay.run_replay(dataset, config.policy)
    out_dir = _make_run_dir(config.output_dir, config.raw)
    files = persist.write_replay_files(report, out_dir)
    echo = dict(config.raw)
    echo["effective_policy"] = config.policy.to_dict()
    echo["effective_scenario"] = dataset.scenario.to_dict()
    persist.write_manifest(out_dir, echo, __version__, config.policy.seed,
                           started, _utc_now(), files)
    print(out_dir)
    return EXIT_OK


def cmd_grid(config: ExperimentConfig, jobs: int = 1) -> int:
    _require(config.grid is not None, "config: grid requires a grid section")
    started = _utc_now()
    result = replay.run_grid(config.grid, jobs=jobs)
    out_dir = _make_run_dir(config.output_dir, config.raw)
    files = persist.write_grid_files(result, out_dir)

    if config.alpha_sweep and config.train_size_sweep:
        sweep_rows = _run_alpha_sweep(config)
        sweep_path = out_dir / persist.ALPHA_SWEEP_CSV
        persist.write_csv(
            sweep_path,
            ["train_size", "alpha", "coverage", "mean_width_ratio"],
            [[r["train_size"], r["alpha"], r["coverage"], r["mean_width_ratio"]]
             for r in sweep_rows])
        files.append(sweep_path)

    persist.write_manifest(out_dir, config.raw, __version__,
                           config.grid.policy_seed, started, _utc_now(), files)
    print(out_dir)
    return EXIT_PARTIAL_FAILURE if result.n_failed else EXIT_OK


def _run_alpha_sweep(config: ExperimentConfig) -> list[dict]:
    grid = config.grid
    scenario = grid.scenarios[0]
    n_test = min(200, scenario.n_batches // 4)
    max_size = max(config.train_size_sweep)
    _require(max_size + n_test <= scenario.n_batches,
             f"config: train_size_sweep max {max_size} plus {n_test} test "
             f"batches exceeds scenario n_batches {scenario.n_batches}")
    dataset = datagen.generate(scenario)
    hp = Hyperparams(n_estimators=grid.search_space.n_estimators_range[0],
                     max_depth=grid.search_space.max_depth_range[1])
    return replay.coverage_width_sweep(
        dataset, config.train_size_sweep, config.alpha_sweep, hp,
        k_folds=grid.cv_folds, n_test=n_test,
        seed=derive_seed(grid.policy_seed, "alpha_sweep"))


def cmd_pca(config: ExperimentConfig) -> int:
    started = _utc_now()
    dataset = _load_or_generate_dataset(config)
    model = pca.fit_pca(dataset.features, n_components=config.n_components)
    scores = pca.project(model, dataset.features)
    blocks = pca.block_summaries(scores, n_blocks=config.n_blocks)
    out_dir = _make_run_dir(config.output_dir, config.raw)
    scores_path = out_dir / persist.PCA_SCORES_CSV
    persist.write_csv(scores_path, ["index", "pc1", "pc2"],
                      [[i, float(s[0]), float(s[1])] for i, s in enumerate(scores)])
    blocks_path = out_dir / persist.PCA_BLOCKS_JSON
    persist.write_json(blocks_path, {
        "n_blocks": config.n_blocks,
        "eigenvalues": [float(v) for v in model.eigenvalues],
        "blocks": [
            {
                "block_index": b.block_index,
                "mean": [float(v) for v in b.mean_2d],
                "cov": [[float(v) for v in row] for row in b.cov_2d],
                "n": b.n,
            }
            for b in blocks
        ],
    })
    persist.write_manifest(out_dir, config.raw, __version__,
                           dataset.scenario.seed, started, _utc_now(),
                           [scores_path, blocks_path])
    print(out_dir)
    return EXIT_OK


def _error_json(exc: Exception) -> str:
    return json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}})


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="driftbench",
        description="Benchmark retraining strategies and conformal intervals "
                    "on synthetic drifting manufacturing data.")
    parser.add_argument("command", choices=["generate", "run", "grid", "pca"])
    parser.add_argument("--config", required=True, help="path to the JSON config")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker processes for grid execution")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config, args.out)
    except ConfigError as exc:
        print(_error_json(exc), file=sys.stderr)
        return EXIT_CONFIG_ERROR

    try:
        if args.command == "generate":
            return cmd_generate(config)
        if args.command == "run":
            return cmd_run(config)
        if args.command == "grid":
            return cmd_grid(config, jobs=args.jobs)
        return cmd_pca(config)
    except ConfigError as exc:
        print(_error_json(exc), file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except Exception as exc:
        print(_error_json(exc), file=sys.stderr)
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
