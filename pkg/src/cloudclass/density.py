"""Cauchy-type data density, feature contribution and typicality."""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

VARIANCE_FLOOR = 1e-12


def cauchy_density(z: np.ndarray, center: np.ndarray, scale_sq: float) -> float:
    """1 / (1 + ||z - center||^2 / scale_sq); equals 1 only at the center."""
    if not scale_sq > 0:
        raise ValueError(f"scale_sq must be positive, got {scale_sq}")
    diff = np.asarray(z, dtype=float) - np.asarray(center, dtype=float)
    return float(1.0 / (1.0 + np.dot(diff, diff) / scale_sq))


def per_feature_density(z: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    """
    Per-feature Cauchy density. A feature whose variance is not positive has
    density 1 by definition.
    """
    z = np.asarray(z, dtype=float)
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    if not z.shape == mean.shape == var.shape:
        raise ValueError(
            f"Shape mismatch: z{z.shape}, mean{mean.shape}, var{var.shape}"
        )
    positive = var > 0
    safe = np.where(positive, np.maximum(var, VARIANCE_FLOOR), 1.0)
    return np.where(positive, 1.0 / (1.0 + (z - mean) ** 2 / safe), 1.0)


@dataclass
class FeatureRanking:
    """Running mean (Lambda) of per-sample per-feature densities of one class."""

    dim: int
    class_id: Optional[int] = None
    sample_count: int = 0
    lambda_cum: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.lambda_cum is None:
            self.lambda_cum = np.zeros(self.dim)

    def ranked(self) -> list[int]:
        """Feature indices, most important first (stable on ties)."""
        return [int(f) for f in np.argsort(-self.lambda_cum, kind="stable")]


def accumulate_feature_contribution(
    ranking: FeatureRanking, d: Sequence[float] | np.ndarray
) -> FeatureRanking:
    d = np.asarray(d, dtype=float)
    if d.shape != ranking.lambda_cum.shape:
        raise ValueError(f"Expected {ranking.lambda_cum.shape}, got {d.shape}")
    ranking.sample_count += 1
    ranking.lambda_cum = ranking.lambda_cum + (d - ranking.lambda_cum) / ranking.sample_count
    return ranking


def global_density(z: np.ndarray, mean: np.ndarray, mean_sq_norm: float) -> float:
    """
    Recursive density of z over a class summarized by its running mean and
    running mean of squared norms.
    """
    z = np.asarray(z, dtype=float)
    mean = np.asarray(mean, dtype=float)
    diff = z - mean
    spread = max(mean_sq_norm - float(np.dot(mean, mean)), 0.0)
    return float(1.0 / (1.0 + np.dot(diff, diff) + spread))


def typicality(densities: Sequence[float] | np.ndarray) -> np.ndarray:
    values = np.asarray(densities, dtype=float)
    if values.size == 0:
        raise ValueError("typicality needs at least one density")
    if np.any(values <= 0):
        raise ValueError("densities must be positive")
    return values / values.sum()
