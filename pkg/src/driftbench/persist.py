"""Run-directory persistence: prediction logs, metrics, manifests.

All CSVs are comma-separated with `\\n` line endings and mandatory
headers; floats are written with shortest round-trip precision so files
re-read bit-exactly. The run manifest is written last and records SHA-256
hashes of every sibling file, making tampering detectable.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .conformal import Decision, PredictionInterval
from .datagen import ControlLimits
from .metrics import PointTier
from .replay import GridResult, ReplayReport

PREDICTIONS_CSV = "predictions.csv"
RETRAIN_EVENTS_CSV = "retrain_events.csv"
METRICS_JSON = "metrics.json"
MANIFEST_JSON = "manifest.json"
GRID_SUMMARY_CSV = "grid_summary.csv"
ALPHA_SWEEP_CSV = "alpha_sweep.csv"
PCA_SCORES_CSV = "pca_scores.csv"
PCA_BLOCKS_JSON = "pca_blocks.json"

PREDICTION_COLUMNS = ["index", "actual", "point", "lower", "upper", "tier", "decision"]
EVENT_COLUMNS = ["at_index", "window_start", "window_end", "n_estimators",
                 "max_depth", "train_seconds"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path: Path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_replay_files(report: ReplayReport, out_dir: Path) -> list[Path]:
    """Emit predictions.csv, retrain_events.csv and metrics.json."""
    out_dir.mkdir(parents=True, exist_ok=True)
    pred_rows = []
    for r in report.records:
        pred_rows.append([
            r.index, r.actual, r.point, r.lower, r.upper, r.tier.label,
            r.decision.value if r.decision is not None else None,
        ])
    pred_path = out_dir / PREDICTIONS_CSV
    write_csv(pred_path, PREDICTION_COLUMNS, pred_rows)

    event_rows = []
    for e in report.retrain_events:
        event_rows.append([
            e.at_index, e.window_start, e.window_end,
            e.hp_used.n_estimators, e.hp_used.max_depth, e.train_seconds,
        ])
    events_path = out_dir / RETRAIN_EVENTS_CSV
    write_csv(events_path, EVENT_COLUMNS, event_rows)

    metrics_path = out_dir / METRICS_JSON
    write_json(metrics_path, metrics_document(report))
    return [pred_path, events_path, metrics_path]


def metrics_document(report: ReplayReport) -> dict:
    """The metrics.json payload; contains no wall-clock values."""
    doc = report.aggregates.to_dict()
    doc["limits"] = {
        "lcl": report.limits.lcl,
        "ucl": report.limits.ucl,
        "clr": report.limits.clr,
    }
    doc["n_retrain_events"] = len(report.retrain_events)
    return doc


@dataclass(frozen=True)
class PredictionRow:
    """Parsed predictions.csv row."""

    index: int
    actual: float
    point: float
    lower: float | None
    upper: float | None
    tier: PointTier
    decision: Decision | None

    def interval(self) -> PredictionInterval | None:
        if self.lower is None or self.upper is None:
            return None
        return PredictionInterval(lower=self.lower, upper=self.upper, point=self.point)


def read_predictions_csv(path: Path) -> list[PredictionRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PREDICTION_COLUMNS:
            raise ValueError(f"unexpected predictions header: {reader.fieldnames}")
        for rec in reader:
            rows.append(PredictionRow(
                index=int(rec["index"]),
                actual=float(rec["actual"]),
                point=float(rec["point"]),
                lower=float(rec["lower"]) if rec["lower"] else None,
                upper=float(rec["upper"]) if rec["upper"] else None,
                tier=PointTier[rec["tier"].upper()],
                decision=Decision(rec["decision"]) if rec["decision"] else None,
            ))
    return rows


def read_metrics_json(path: Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def limits_from_metrics(doc: dict) -> ControlLimits:
    return ControlLimits(lcl=doc["limits"]["lcl"], ucl=doc["limits"]["ucl"])


def write_grid_summary(rows: list[dict], path: Path) -> None:
    columns = ["scenario", "cadence", "window", "hp_policy", "model_kind",
               "good_frac", "mediocre_frac", "poor_frac",
               "pct_of_baseline_good", "pct_of_baseline_mediocre",
               "pct_of_baseline_poor", "coverage", "width_ratio",
               "sensitivity", "rmse_ratio", "train_seconds", "status"]
    write_csv(path, columns, [[row.get(c) for c in columns] for row in rows])


def write_grid_files(result: GridResult, out_dir: Path) -> list[Path]:
    """Per-cell run dirs plus the one-row-per-combination summary."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    cells_dir = out_dir / "cells"
    for cell in result.cells:
        cell_dir = cells_dir / cell.key.run_name()
        if cell.ok:
            written.extend(write_replay_files(cell.report, cell_dir))
        else:
            cell_dir.mkdir(parents=True, exist_ok=True)
            err_path = cell_dir / "error.json"
            write_json(err_path, {"error": cell.error})
            written.append(err_path)
    summary_path = out_dir / GRID_SUMMARY_CSV
    write_grid_summary(list(result.summary), summary_path)
    written.append(summary_path)
    return written


def write_manifest(out_dir: Path, config_echo: dict, version: str, seed: int | None,
                   started_utc: str, finished_utc: str,
                   files: list[Path]) -> Path:
    """Write manifest.json last, with content hashes of the emitted files."""
    manifest = {
        "config": config_echo,
        "version": version,
        "seed": seed,
        "started_utc": started_utc,
        "finished_utc": finished_utc,
        "files": {
            str(p.relative_to(out_dir)): sha256_file(p)
            for p in sorted(files)
        },
    }
    path = out_dir / MANIFEST_JSON
    write_json(path, manifest)
    return path


def verify_manifest(out_dir: Path) -> list[str]:
    """Return mismatched file names (empty when all hashes verify)."""
    with open(out_dir / MANIFEST_JSON) as fh:
        manifest = json.load(fh)
    bad = []
    for rel, digest in manifest["files"].items():
        p = out_dir / rel
        if not p.exists() or sha256_file(p) != digest:
            bad.append(rel)
    return bad
