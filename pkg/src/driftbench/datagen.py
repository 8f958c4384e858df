"""Synthetic batch-manufacturing data with controlled drift.

Generates reproducible datasets that mimic the failure modes seen in
batch production of formulated chemicals: an abrupt supplier-style shift
in the input distribution (optionally with a change in the input-output
relationship), slow equipment-style drift realized as a random walk on
the feature means, and seasonal variation on the quality target. Control
limits are frozen from a pre-drift baseline segment, mirroring SPC
practice where limits describe the in-control process.

Target mechanics: the quality value is a linear function of the features
plus one pairwise interaction, a sinusoidal seasonal term, and Gaussian
noise. Under a sudden shift, every feature mean moves by
``shift_magnitude`` (in feature-sigma units) in the direction that raises
the target, and the coefficient vector is blended toward a fixed
alternate vector by ``concept_rotation``. Under gradual drift the feature
means follow a random walk and the blend fraction ramps linearly from 0
to ``concept_rotation`` over the run.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .seeding import derive_seed

# Fraction of the run used as baseline when no change point exists.
BASELINE_FRACTION = 0.2

# Relative strength of the pairwise interaction term (scales with the
# coefficient norm).
INTERACTION_STRENGTH = 0.4

# Geometric decay of coefficient magnitudes; concentrates signal in a few
# features so tree ensembles saturate with ~100 training batches.
COEFF_DECAY = 0.6

MIN_BATCHES = 30


class DriftKind(enum.Enum):
    """Drift archetypes the generator can produce."""

    NONE = "none"
    SUDDEN_SHIFT = "sudden_shift"
    GRADUAL_DRIFT = "gradual_drift"
    COMBINED = "combined"


@dataclass(frozen=True)
class Batch:
    """One production record: feature vector, quality target, order index."""

    index: int
    features: np.ndarray
    target: float


@dataclass(frozen=True)
class ControlLimits:
    """Lower/upper control limits; `clr` is always `ucl - lcl`."""

    lcl: float
    ucl: float

    def __post_init__(self) -> None:
        if not self.ucl > self.lcl:
            raise ValueError(f"ucl must exceed lcl, got lcl={self.lcl}, ucl={self.ucl}")

    @property
    def clr(self) -> float:
        return self.ucl - self.lcl


@dataclass(frozen=True)
class DriftScenario:
    """Full configuration of one synthetic dataset.

    `shift_magnitude` is the sudden feature-mean offset in feature-sigma
    units, `concept_rotation` the fractional blend of the coefficient
    vector toward its alternate, `walk_step` the per-batch sigma of the
    gradual random walk on feature means.
    """

    kind: DriftKind
    n_batches: int
    n_features: int = 12
    change_point_fraction: float | None = None
    shift_magnitude: float = 0.0
    concept_rotation: float = 0.0
    walk_step: float = 0.0
    seasonal_amplitude: float = 0.0
    seasonal_period: int = 50
    noise_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_batches < MIN_BATCHES:
            raise ValueError(
                f"n_batches={self.n_batches} too small: need at least {MIN_BATCHES} "
                "to form a baseline segment"
            )
        if self.n_features < 1:
            raise ValueError("n_features must be positive")
        if self.noise_sigma <= 0:
            raise ValueError(f"noise_sigma must be > 0, got {self.noise_sigma}")
        if self.seasonal_period < 1:
            raise ValueError("seasonal_period must be positive")
        if min(self.shift_magnitude, self.concept_rotation, self.walk_step,
               self.seasonal_amplitude) < 0:
            raise ValueError("drift magnitudes must be non-negative")
        if self.kind in (DriftKind.SUDDEN_SHIFT, DriftKind.COMBINED):
            f = self.change_point_fraction
            if f is None or not (0.0 < f < 1.0):
                raise ValueError(
                    f"{self.kind.value} requires change_point_fraction in (0, 1)"
                )
        if self.kind in (DriftKind.GRADUAL_DRIFT, DriftKind.COMBINED):
            if self.walk_step <= 0:
                raise ValueError(f"{self.kind.value} requires walk_step > 0")
        if self.kind is DriftKind.NONE:
            if self.shift_magnitude != 0 or self.walk_step != 0 or self.concept_rotation != 0:
                raise ValueError(
                    "kind=none requires shift_magnitude = walk_step = concept_rotation = 0"
                )

    @property
    def change_point(self) -> int | None:
        """Batch index where the sudden shift occurs, if any."""
        if self.kind in (DriftKind.SUDDEN_SHIFT, DriftKind.COMBINED):
            return int(math.floor(self.change_point_fraction * self.n_batches))
        return None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DriftScenario":
        d = dict(d)
        d["kind"] = DriftKind(d["kind"])
        return cls(**d)


@dataclass(frozen=True)
class Dataset:
    """Generated batches plus the control limits frozen from the baseline."""

    features: np.ndarray  # (n_batches, n_features)
    targets: np.ndarray  # (n_batches,)
    limits: ControlLimits
    scenario: DriftScenario

    def __post_init__(self) -> None:
        if self.features.shape != (self.scenario.n_batches, self.scenario.n_features):
            raise ValueError("feature matrix shape does not match scenario")
        if self.targets.shape != (self.scenario.n_batches,):
            raise ValueError("target vector shape does not match scenario")

    def __len__(self) -> int:
        return self.scenario.n_batches

    @property
    def batches(self) -> list[Batch]:
        return [
            Batch(index=i, features=self.features[i], target=float(self.targets[i]))
            for i in range(len(self))
        ]


def _coefficients(scenario: DriftScenario) -> tuple[np.ndarray, np.ndarray, float]:
    """Base and alternate coefficient vectors plus the interaction weight.

    Magnitudes decay geometrically over a seeded feature permutation, signs
    are seeded, and both vectors are scaled to a fixed norm so the signal
    variance is stable across scenarios with equal n_features.
    """
    k = scenario.n_features
    rng = np.random.default_rng(derive_seed(scenario.seed, "coefficients"))
    decay = COEFF_DECAY ** np.arange(k)

    def draw() -> np.ndarray:
        signs = rng.choice([-1.0, 1.0], size=k)
        perm = rng.permutation(k)
        beta = signs * decay[perm]
        return beta / np.linalg.norm(beta)

    scale = 2.0  # target-signal sigma in noise-comparable units
    beta_base = draw() * scale
    beta_alt = draw() * scale
    gamma = INTERACTION_STRENGTH * scale
    return beta_base, beta_alt, gamma


def _blend(beta_base: np.ndarray, beta_alt: np.ndarray, fraction: float) -> np.ndarray:
    """Blend base toward alternate by `fraction`, preserving the base norm."""
    if fraction <= 0.0:
        return beta_base
    mixed = (1.0 - fraction) * beta_base + fraction * beta_alt
    norm = np.linalg.norm(mixed)
    if norm == 0.0:
        return mixed
    return mixed * (np.linalg.norm(beta_base) / norm)


def generate(scenario: DriftScenario) -> Dataset:
    """Generate a dataset for `scenario`; bit-identical for equal scenarios."""
    n, k = scenario.n_batches, scenario.n_features
    rng = np.random.default_rng(derive_seed(scenario.seed, "stream"))
    beta_base, beta_alt, gamma = _coefficients(scenario)

    # Per-batch feature means.
    means = np.zeros((n, k))
    if scenario.kind in (DriftKind.GRADUAL_DRIFT, DriftKind.COMBINED):
        steps = rng.normal(0.0, scenario.walk_step, size=(n, k))
        steps[0] = 0.0
        means += np.cumsum(steps, axis=0)
    cp = scenario.change_point
    if cp is not None and scenario.shift_magnitude > 0:
        # Shift every feature mean; signs follow the base coefficients so the
        # shift moves the target upward deterministically.
        direction = np.where(beta_base >= 0.0, 1.0, -1.0)
        means[cp:] += scenario.shift_magnitude * direction

    features = means + rng.normal(0.0, 1.0, size=(n, k))

    # Per-batch coefficient vectors.
    rotation = np.zeros(n)
    if scenario.concept_rotation > 0:
        if scenario.kind in (DriftKind.SUDDEN_SHIFT, DriftKind.COMBINED):
            rotation[cp:] = scenario.concept_rotation
        elif scenario.kind is DriftKind.GRADUAL_DRIFT:
            rotation = scenario.concept_rotation * np.arange(n) / max(n - 1, 1)

    # Per-batch blended coefficients, vectorized: the blend preserves the
    # base norm, so the signal is a rescaled mix of the two linear terms.
    lin_base = features @ beta_base
    lin_alt = features @ beta_alt
    r = rotation
    mixed_norm = np.sqrt(
        (1.0 - r) ** 2 * (beta_base @ beta_base)
        + r**2 * (beta_alt @ beta_alt)
        + 2.0 * r * (1.0 - r) * (beta_base @ beta_alt)
    )
    rescale = np.linalg.norm(beta_base) / np.where(mixed_norm > 0, mixed_norm, 1.0)
    targets = rescale * ((1.0 - r) * lin_base + r * lin_alt)

    targets += gamma * features[:, 0] * features[:, 1]
    if scenario.seasonal_amplitude > 0:
        targets += scenario.seasonal_amplitude * np.sin(
            2.0 * np.pi * np.arange(n) / scenario.seasonal_period
        )
    targets += rng.normal(0.0, scenario.noise_sigma, size=n)

    limits = compute_limits(targets, _baseline_end(scenario))
    return Dataset(features=features, targets=targets, limits=limits, scenario=scenario)


def _baseline_end(scenario: DriftScenario) -> int:
    cp = scenario.change_point
    if cp is not None:
        return cp
    return int(math.floor(BASELINE_FRACTION * scenario.n_batches))


def baseline_segment(dataset: Dataset) -> tuple[int, int]:
    """Index range [start, end) used for control-limit computation."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    return 0, _baseline_end(dataset.scenario)


def compute_limits(targets: np.ndarray, baseline_end: int) -> ControlLimits:
    """Mean +/- 3 sigma over the baseline prefix of `targets`."""
    base = np.asarray(targets[:baseline_end], dtype=float)
    mu = float(np.mean(base))
    sigma = float(np.std(base))
    if sigma <= 0:
        raise ValueError("baseline targets are constant; control limits undefined")
    return ControlLimits(lcl=mu - 3.0 * sigma, ucl=mu + 3.0 * sigma)


# ---------------------------------------------------------------------------
# Serialization: CSV of batches plus a JSON sidecar manifest.
# ---------------------------------------------------------------------------

def write_dataset_csv(dataset: Dataset, csv_path: str | Path,
                      manifest_path: str | Path | None = None) -> None:
    """Write `index,f0..f{k-1},target` rows and the sidecar manifest.

    Numbers are written with full round-trip precision (shortest repr).
    """
    csv_path = Path(csv_path)
    k = dataset.scenario.n_features
    header = ["index"] + [f"f{j}" for j in range(k)] + ["target"]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(dataset)):
            row = [str(i)]
            row += [repr(float(v)) for v in dataset.features[i]]
            row.append(repr(float(dataset.targets[i])))
            writer.writerow(row)
    if manifest_path is None:
        manifest_path = csv_path.with_suffix(".json")
    manifest = dict(dataset.scenario.to_dict())
    manifest["lcl"] = dataset.limits.lcl
    manifest["ucl"] = dataset.limits.ucl
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_dataset_csv(csv_path: str | Path,
                     manifest_path: str | Path | None = None) -> Dataset:
    """Inverse of :func:`write_dataset_csv`."""
    csv_path = Path(csv_path)
    if manifest_path is None:
        manifest_path = csv_path.with_suffix(".json")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    lcl = manifest.pop("lcl")
    ucl = manifest.pop("ucl")
    scenario = DriftScenario.from_dict(manifest)
    rows: list[list[str]] = []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)  # header
        rows = list(reader)
    n, k = len(rows), scenario.n_features
    features = np.empty((n, k))
    targets = np.empty(n)
    for i, row in enumerate(rows):
        if int(row[0]) != i:
            raise ValueError(f"non-consecutive index at row {i}: {row[0]}")
        features[i] = [float(v) for v in row[1:1 + k]]
        targets[i] = float(row[1 + k])
    return Dataset(features=features, targets=targets,
                   limits=ControlLimits(lcl=lcl, ucl=ucl), scenario=scenario)
