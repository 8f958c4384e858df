"""Principal component analysis for drift characterization.

Features are centered and (by default) standardized before the sample
covariance is eigendecomposed, i.e. correlation PCA, since raw-material
QC parameters carry heterogeneous units. Component signs are fixed so
each component's largest-magnitude entry is positive, making fits
bit-reproducible. Chronological block summaries of the leading two score
dimensions give the per-block mean/covariance ellipses used to visualize
slow distribution drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EIGENVALUE_CLIP = -1e-12


class DegenerateColumnError(ValueError):
    """A feature column is constant, so standardization is undefined."""

    def __init__(self, column: int):
        super().__init__(f"feature column {column} is constant (zero variance)")
        self.column = column


@dataclass(frozen=True)
class PcaModel:
    """Column stats plus orthonormal components (rows) and eigenvalues."""

    mean: np.ndarray
    scale: np.ndarray  # divisor applied after centering (ones when raw)
    components: np.ndarray  # (n_components, n_features)
    eigenvalues: np.ndarray  # descending, >= 0

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def n_features(self) -> int:
        return self.components.shape[1]


@dataclass(frozen=True)
class BlockSummary:
    """Mean and covariance of one chronological block of 2-D scores."""

    block_index: int
    mean_2d: np.ndarray  # (2,)
    cov_2d: np.ndarray  # (2, 2)
    n: int


def fit_pca(features, n_components: int, standardize: bool = True) -> PcaModel:
    """Eigendecompose the (standardized) sample covariance of `features`."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("fit_pca needs a 2-D matrix with at least 2 rows")
    n, k = X.shape
    if not (1 <= n_components <= k):
        raise ValueError(f"n_components must be in [1, {k}], got {n_components}")
    mean = X.mean(axis=0)
    if standardize:
        scale = X.std(axis=0, ddof=1)
        for j in range(k):
            if scale[j] == 0.0:
                raise DegenerateColumnError(j)
    else:
        scale = np.ones(k)
    Z = (X - mean) / scale
    cov = (Z.T @ Z) / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    if eigvals.min() < EIGENVALUE_CLIP:
        raise ValueError(f"covariance eigenvalue {eigvals.min()} below clip threshold")
    eigvals = np.clip(eigvals, 0.0, None)
    components = eigvecs.T[:n_components].copy()
    for row in components:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    return PcaModel(mean=mean, scale=scale, components=components,
                    eigenvalues=eigvals[:n_components].copy())


def project(model: PcaModel, x) -> np.ndarray:
    """Score vector(s): standardized, centered input dotted with components."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr.reshape(1, -1)
    if arr.shape[1] != model.n_features:
        raise ValueError(
            f"expected {model.n_features} features, got {arr.shape[1]}"
        )
    scores = ((arr - model.mean) / model.scale) @ model.components.T
    return scores[0] if single else scores


def reconstruct(model: PcaModel, scores) -> np.ndarray:
    """Inverse transform back to the standardized feature space."""
    arr = np.asarray(scores, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr.reshape(1, -1)
    z = arr @ model.components
    return z[0] if single else z


def block_summaries(scores, n_blocks: int = 8) -> list[BlockSummary]:
    """Contiguous chronological blocks of 2-D scores; remainder to the last.

    Each block gets the sample mean and covariance of (PC1, PC2), enough
    to draw distribution ellipses per block.
    """
    S = np.asarray(scores, dtype=np.float64)
    if S.ndim != 2 or S.shape[1] < 2:
        raise ValueError("block_summaries expects 2-D scores with >= 2 columns")
    S = S[:, :2]
    n = S.shape[0]
    if n < 2 * n_blocks:
        raise ValueError(f"need at least {2 * n_blocks} points for {n_blocks} blocks")
    base = n // n_blocks
    out = []
    start = 0
    for b in range(n_blocks):
        size = base if b < n_blocks - 1 else n - base * (n_blocks - 1)
        block = S[start:start + size]
        start += size
        centered = block - block.mean(axis=0)
        cov = (centered.T @ centered) / (size - 1)
        out.append(BlockSummary(block_index=b, mean_2d=block.mean(axis=0),
                                cov_2d=cov, n=size))
    return out
