"""
Per-class prototype store.

Every class is a set of data clouds: prototypes that are the running mean of
the samples assigned to them by nearest-prototype (Voronoi) assignment.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from cloudclass.density import FeatureRanking, global_density
from cloudclass.errors import UntrainedModelError

logger = logging.getLogger(__name__)

# Chord length between unit vectors 30 degrees apart.
R_STAR = math.sqrt(2.0 - 2.0 * math.cos(math.pi / 6.0))
R_STAR_SQ = 2.0 - math.sqrt(3.0)
RADIUS_FLOOR = 1e-6


@dataclass
class DataCloud:
    cloud_id: int
    prototype: np.ndarray
    support: int = 1
    radius_sq: float = R_STAR_SQ
    # running mean of the members' squared norms (local scatter reporting)
    member_sq_norm: float = 0.0

    @property
    def scatter(self) -> float:
        return max(self.member_sq_norm - float(np.dot(self.prototype, self.prototype)), 0.0)


@dataclass
class ClassModel:
    class_id: int
    label: str
    dim: int
    clouds: list[DataCloud] = field(default_factory=list)
    class_mean: np.ndarray = field(default=None)  # type: ignore[assignment]
    class_mean_sq_norm: float = 0.0
    sample_count: int = 0
    feature_ranking: FeatureRanking = field(default=None)  # type: ignore[assignment]
    feature_mask: np.ndarray = field(default=None)  # type: ignore[assignment]
    next_cloud_id: int = 0

    def __post_init__(self):
        if self.class_mean is None:
            self.class_mean = np.zeros(self.dim)
        if self.feature_ranking is None:
            self.feature_ranking = FeatureRanking(dim=self.dim, class_id=self.class_id)
        if self.feature_mask is None:
            self.feature_mask = np.ones(self.dim, dtype=bool)

    @property
    def P(self) -> int:
        return len(self.clouds)

    @property
    def prototypes(self) -> np.ndarray:
        return np.array([c.prototype for c in self.clouds]).reshape(-1, self.dim)

    def density(self, z: np.ndarray) -> float:
        return global_density(z, self.class_mean, self.class_mean_sq_norm)


def _new_cloud(model: ClassModel, x: np.ndarray) -> DataCloud:
    cloud = DataCloud(
        cloud_id=model.next_cloud_id,
        prototype=x.copy(),
        member_sq_norm=float(np.dot(x, x)),
    )
    model.next_cloud_id += 1
    return cloud


def update_class_stats(model: ClassModel, x: np.ndarray) -> ClassModel:
    model.sample_count += 1
    n = model.sample_count
    model.class_mean = model.class_mean + (x - model.class_mean) / n
    model.class_mean_sq_norm += (float(np.dot(x, x)) - model.class_mean_sq_norm) / n
    return model


def init_class(x: np.ndarray, class_id: int, label: Optional[str] = None) -> ClassModel:
    x = np.asarray(x, dtype=float)
    model = ClassModel(
        class_id=class_id,
        label=label if label is not None else str(class_id),
        dim=x.size,
    )
    update_class_stats(model, x)
    model.clouds.append(_new_cloud(model, x))
    return model


def nearest_cloud(model: ClassModel, x: np.ndarray) -> int:
    if not model.clouds:
        raise UntrainedModelError(f"Class '{model.label}' has no data clouds")
    dist = np.sum((model.prototypes - np.asarray(x, dtype=float)) ** 2, axis=1)
    # argmin keeps the first (lowest cloud_id) index on ties
    return int(np.argmin(dist))


def should_create_cloud(model: ClassModel, x: np.ndarray) -> bool:
    """
    The density of x is at least the highest or at most the lowest density of
    the existing prototypes.

    One departure from that test: a sample coinciding with an existing
    prototype never spawns a cloud, even when its density is the highest.
    Equal densities are otherwise not special; the second sample of a
    one-cloud class always ties the prototype, so the area-of-influence gate
    in `absorb` decides.
    """
    if not model.clouds:
        raise UntrainedModelError(f"Class '{model.label}' has no data clouds")
    x = np.asarray(x, dtype=float)
    if any(np.array_equal(x, c.prototype) for c in model.clouds):
        return False
    d_x = model.density(x)
    d_p = [model.density(c.prototype) for c in model.clouds]
    return d_x >= max(d_p) or d_x <= min(d_p)


def add_cloud(model: ClassModel, x: np.ndarray) -> ClassModel:
    model.clouds.append(_new_cloud(model, np.asarray(x, dtype=float)))
    return model


def update_cloud(model: ClassModel, index: int, x: np.ndarray) -> ClassModel:
    x = np.asarray(x, dtype=float)
    cloud = model.clouds[index]
    s_old = cloud.support
    cloud.prototype = (s_old / (s_old + 1)) * cloud.prototype + (1.0 / (s_old + 1)) * x
    cloud.support = s_old + 1
    cloud.member_sq_norm += (float(np.dot(x, x)) - cloud.member_sq_norm) / cloud.support
    cloud.radius_sq = radius_recursion(
        cloud.radius_sq, float(np.dot(cloud.prototype, cloud.prototype))
    )
    if cloud.radius_sq <= RADIUS_FLOOR:
        logger.debug(
            "Radius of cloud %d in class '%s' floored at %g",
            cloud.cloud_id,
            model.label,
            RADIUS_FLOOR,
        )
        cloud.radius_sq = RADIUS_FLOOR
    return model


def outside_influence(
    model: ClassModel, x: np.ndarray, index: Optional[int] = None
) -> bool:
    """x lies farther than r* from the nearest prototype (or from cloud `index`)."""
    if index is None:
        index = nearest_cloud(model, x)
    gap = np.asarray(x, dtype=float) - model.clouds[index].prototype
    return float(np.linalg.norm(gap)) > R_STAR


def radius_recursion(radius_sq: float, prototype_sq_norm: float) -> float:
    return (radius_sq + (1.0 - prototype_sq_norm)) / 2.0


def absorb(
    model: ClassModel, x: np.ndarray
) -> tuple[Literal["created", "updated"], int]:
    """
    Absorbs one sample: class statistics first, then either a new cloud (the
    density test holds and x lies outside the nearest prototype's area of
    influence) or an update of the nearest cloud.
    """
    x = np.asarray(x, dtype=float)
    update_class_stats(model, x)
    n_star = nearest_cloud(model, x)
    if outside_influence(model, x, n_star) and should_create_cloud(model, x):
        add_cloud(model, x)
        return "created", model.P - 1
    update_cloud(model, n_star, x)
    return "updated", n_star


def grow_class(
    samples: list[np.ndarray], class_id: int, label: Optional[str] = None
) -> tuple[ClassModel, list[int]]:
    """
    Builds a class from an ordered sample list; returns the model and the cloud
    index each sample ended up in.
    """
    if not samples:
        raise ValueError("grow_class needs at least one sample")
    model = init_class(samples[0], class_id, label)
    assignment = [0]
    for x in samples[1:]:
        _, index = absorb(model, x)
        assignment.append(index)
    return model, assignment
