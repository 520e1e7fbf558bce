"""
Streaming standardization, outlier gating and unity normalization.

Raw samples are standardized against running moments and then rescaled to
[0, 1] against the running extrema of the standardized values.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from cloudclass.errors import DegenerateFeatureError, DimensionMismatchError

logger = logging.getLogger(__name__)

OUTLIER_Z = 3.0
SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class ProcessedSample:
    raw: np.ndarray
    standardized: np.ndarray
    normalized: np.ndarray
    outlier_flag: bool


class RunningStats:
    """Per-feature running mean, mean of squares and standardized extrema."""

    def __init__(self, dim: Optional[int] = None):
        self.count = 0
        self.dim: Optional[int] = None
        self.mean = np.zeros(0)
        self.mean_sq = np.zeros(0)
        self.std_min = np.zeros(0)
        self.std_max = np.zeros(0)
        if dim is not None:
            self._allocate(dim)

    def _allocate(self, dim: int) -> None:
        if dim <= 0:
            raise ValueError("dim must be a positive integer")
        self.dim = int(dim)
        self.mean = np.zeros(self.dim)
        self.mean_sq = np.zeros(self.dim)
        self.std_min = np.full(self.dim, np.inf)
        self.std_max = np.full(self.dim, -np.inf)

    def check_dim(self, x: np.ndarray) -> np.ndarray:
        arr = np.asarray(x, dtype=float).reshape(-1)
        if self.dim is not None and arr.size != self.dim:
            raise DimensionMismatchError(self.dim, arr.size)
        return arr

    @property
    def variance(self) -> np.ndarray:
        return np.clip(self.mean_sq - self.mean**2, 0.0, None)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def constant_features(self) -> list[int]:
        return [int(f) for f in np.flatnonzero(self.std <= SIGMA_FLOOR)]

    def standardized_image(self, x: np.ndarray) -> np.ndarray:
        # A zero-spread feature maps every value onto its mean.
        std = self.std
        safe = np.where(std > SIGMA_FLOOR, std, 1.0)
        return np.where(std > SIGMA_FLOOR, (x - self.mean) / safe, 0.0)

    def update(self, x: Sequence[float] | np.ndarray, track_extrema: bool = True):
        arr = self.check_dim(np.asarray(x, dtype=float))
        if self.dim is None:
            self._allocate(arr.size)
        self.count += 1
        self.mean += (arr - self.mean) / self.count
        self.mean_sq += (arr**2 - self.mean_sq) / self.count
        if track_extrema:
            self.extend_extrema(self.standardized_image(arr))
        return self

    def extend_extrema(self, s: np.ndarray) -> None:
        np.minimum(self.std_min, s, out=self.std_min)
        np.maximum(self.std_max, s, out=self.std_max)

    @classmethod
    def from_batch(cls, rows: Iterable[Sequence[float]]) -> "RunningStats":
        """
        Ingests every row, then recomputes the extrema over the non-outlier
        rows against the final moments.
        """
        matrix = np.atleast_2d(np.asarray(list(rows), dtype=float))
        if matrix.size == 0:
            raise ValueError("Cannot build statistics from an empty batch")
        stats = cls(matrix.shape[1])
        for row in matrix:
            stats.update(row, track_extrema=False)
        images = np.array([stats.standardized_image(row) for row in matrix])
        inliers = images[np.all(np.abs(images) < OUTLIER_Z, axis=1)]
        if inliers.size == 0:
            inliers = images
        stats.std_min = inliers.min(axis=0)
        stats.std_max = inliers.max(axis=0)
        return stats

    @property
    def extrema_range(self) -> np.ndarray:
        return self.std_max - self.std_min

    def normalized_variance(self) -> np.ndarray:
        """Variance of the normalized stream per feature, 1/(max - min)^2."""
        span = np.maximum(self.extrema_range, SIGMA_FLOOR)
        return 1.0 / span**2


def update_stats(stats: RunningStats, x: Sequence[float] | np.ndarray) -> RunningStats:
    return stats.update(x)


def standardize(
    stats: RunningStats, x: Sequence[float] | np.ndarray, strict: bool = False
) -> tuple[np.ndarray, bool]:
    """
    Returns the z-score of x and whether any |z| reaches the outlier gate.
    """
    arr = stats.check_dim(np.asarray(x, dtype=float))
    if stats.count == 0:
        raise ValueError("Statistics are empty; ingest samples first")
    std = stats.std
    degenerate = np.flatnonzero(std <= SIGMA_FLOOR)
    if degenerate.size:
        if strict:
            raise DegenerateFeatureError(int(degenerate[0]), "zero variance")
        logger.debug("Flooring sigma of constant features %s", degenerate.tolist())
        std = np.maximum(std, SIGMA_FLOOR)
    z = (arr - stats.mean) / std
    return z, bool(np.any(np.abs(z) >= OUTLIER_Z))


def normalize(stats: RunningStats, s: np.ndarray, strict: bool = False) -> np.ndarray:
    span = stats.extrema_range
    flat = np.flatnonzero(~(span > 0))
    if flat.size:
        if strict:
            raise DegenerateFeatureError(int(flat[0]), "constant standardized range")
        span = np.where(span > 0, span, SIGMA_FLOOR)
    return np.clip((np.asarray(s, dtype=float) - stats.std_min) / span, 0.0, 1.0)


def process(
    stats: RunningStats, x: Sequence[float] | np.ndarray, strict: bool = False
) -> ProcessedSample:
    raw = stats.check_dim(np.asarray(x, dtype=float))
    z, outlier = standardize(stats, raw, strict=strict)
    return ProcessedSample(
        raw=raw,
        standardized=z,
        normalized=normalize(stats, z, strict=strict),
        outlier_flag=outlier,
    )


def destandardize(stats: RunningStats, normalized: np.ndarray) -> np.ndarray:
    """Maps a normalized vector back to raw units (inverse of process)."""
    z = np.asarray(normalized, dtype=float) * stats.extrema_range + stats.std_min
    return z * stats.std + stats.mean
