"""Dense similarity, argmax matching, and ambiguity scoring.

All positions are flattened row-major over (row, column); a flat index k on
an (h, w) grid is the point (x, y) = (k % w, k // w).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IntegrityError
from .store import CorrespondenceSet, FeatureStack, Mask

NORM_EPS = 1e-12


@dataclass
class FeatureMatrix:
    """Position-major feature rows: (d, q) with d = h * w."""

    values: np.ndarray
    grid: tuple[int, int]  # (height, width)
    normalized: bool = False
    zero_rows: np.ndarray | None = field(default=None)  # bool mask over rows, set if normalized

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


@dataclass
class SimilarityMatrix:
    """Pairwise scores, rows index side a, columns index side b."""

    values: np.ndarray
    grid_a: tuple[int, int]
    grid_b: tuple[int, int]


def normalize_rows(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """L2-normalize rows; all-zero rows stay zero and are reported."""
    norms = np.linalg.norm(values, axis=1)
    zero = norms <= NORM_EPS
    safe = np.where(zero, 1.0, norms)
    return values / safe[:, None], zero


def flatten_layer(stack: FeatureStack, layer_id: int, normalize: bool = True) -> FeatureMatrix:
    """Reshape one layer to (h*w, channels) rows, optionally unit-norm."""
    block = stack.layer(layer_id)
    values = block.values.reshape(block.height * block.width, block.channels).astype(np.float64)
    if normalize:
        values, zero = normalize_rows(values)
        return FeatureMatrix(values, (block.height, block.width), normalized=True, zero_rows=zero)
    return FeatureMatrix(values, (block.height, block.width))


def similarity(a: FeatureMatrix, b: FeatureMatrix) -> SimilarityMatrix:
    """Pairwise dot products a @ b.T; cosine scores when both sides are normalized."""
    if a.cols != b.cols:
        raise IntegrityError(f"feature dims disagree: {a.cols} vs {b.cols}")
    return SimilarityMatrix(a.values @ b.values.T, a.grid, b.grid)


def _mask_flat_indices(mask: Mask, grid: tuple[int, int], side: str) -> np.ndarray:
    if (mask.height, mask.width) != grid:
        raise IntegrityError(
            f"mask_{side} is {mask.height}x{mask.width}, similarity grid is {grid[0]}x{grid[1]}"
        )
    return np.flatnonzero(mask.bits.ravel())


def _points_from_flat(indices: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    _, w = grid
    return np.stack([indices % w, indices // w], axis=1).astype(np.int32)


def argmax_match(d: SimilarityMatrix, mask_a: Mask, mask_b: Mask) -> CorrespondenceSet:
    """Best-scoring partner in mask_b for every set position of mask_a.

    Ties break to the smallest flattened index in b so results are
    reproducible. Skewness is left zeroed; fill it with
    :func:`row_skewness` per pair when needed downstream.
    """
    idx_a = _mask_flat_indices(mask_a, d.grid_a, "a")
    idx_b = _mask_flat_indices(mask_b, d.grid_b, "b")
    if idx_b.size == 0:
        raise IntegrityError("no candidate targets: mask_b is empty")
    sub = d.values[np.ix_(idx_a, idx_b)]
    best = np.argmax(sub, axis=1)  # first occurrence wins: smallest flat index
    scores = sub[np.arange(idx_a.size), best]
    return CorrespondenceSet(
        points_a=_points_from_flat(idx_a, d.grid_a),
        points_b=_points_from_flat(idx_b[best], d.grid_b),
        scores=scores.astype(np.float32),
        skewness=np.zeros(idx_a.size, dtype=np.float32),
        grid_a=d.grid_a,
        grid_b=d.grid_b,
    )


def row_skewness(d: SimilarityMatrix, row: int, candidates: Mask | None = None) -> tuple[float, bool]:
    """Adjusted Fisher-Pearson sample skewness of one similarity row.

    Returns ``(value, flat)``; a zero-variance row is defined as skewness 0
    with the flat flag raised. Requires at least 3 candidates.
    """
    values = d.values[row]
    if candidates is not None:
        values = values[_mask_flat_indices(candidates, d.grid_b, "candidates")]
    return sample_skewness(values)


def sample_skewness(values: np.ndarray) -> tuple[float, bool]:
    """n/((n-1)(n-2)) * sum(((x - mean) / std)^3) with the (n-1)-denominator std."""
    values = np.asarray(values, dtype=np.float64).ravel()
    n = values.size
    if n < 3:
        raise IntegrityError(f"skewness needs at least 3 candidates, got {n}")
    mean = values.mean()
    std = values.std(ddof=1)
    if std == 0.0:
        return 0.0, True
    scaled = (values - mean) / std
    return float(n / ((n - 1) * (n - 2)) * np.sum(scaled**3)), False


def row_skewness_bulk(
    d: SimilarityMatrix, mask_a: Mask, mask_b: Mask
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`row_skewness` for every set position of mask_a with
    candidates restricted to mask_b. Returns ``(values, flat_flags)`` aligned
    with the mask_a ordering used by :func:`argmax_match`."""
    idx_a = _mask_flat_indices(mask_a, d.grid_a, "a")
    idx_b = _mask_flat_indices(mask_b, d.grid_b, "b")
    n = idx_b.size
    if n < 3:
        raise IntegrityError(f"skewness needs at least 3 candidates, got {n}")
    sub = d.values[np.ix_(idx_a, idx_b)]
    mean = sub.mean(axis=1, keepdims=True)
    std = sub.std(axis=1, ddof=1, keepdims=True)
    flat = std[:, 0] == 0.0
    std = np.where(std == 0.0, 1.0, std)
    scaled = (sub - mean) / std
    values = n / ((n - 1) * (n - 2)) * np.sum(scaled**3, axis=1)
    values[flat] = 0.0
    return values, flat


def best_match_scores(d: SimilarityMatrix, mask_a: Mask, mask_b: Mask) -> np.ndarray:
    """Row-wise maxima restricted to the masks, aligned with mask_a positions."""
    idx_a = _mask_flat_indices(mask_a, d.grid_a, "a")
    idx_b = _mask_flat_indices(mask_b, d.grid_b, "b")
    if idx_b.size == 0:
        raise IntegrityError("no candidate targets: mask_b is empty")
    return d.values[np.ix_(idx_a, idx_b)].max(axis=1)


def full_mask(grid: tuple[int, int]) -> Mask:
    return Mask(np.ones(grid, dtype=np.uint8))
