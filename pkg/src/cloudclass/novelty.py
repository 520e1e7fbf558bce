"""
Confidence-drop novelty detection and autonomous class formation.

Every unlabeled sample is scored by its best cloud-level density over all
known classes. A score below mean - m*sigma of the running confidence puts the
sample in the outlier buffer; once enough buffered samples share a data cloud
they become a new class.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from cloudclass.clouds import R_STAR, R_STAR_SQ, ClassModel, absorb, grow_class
from cloudclass.config import ConfidenceScale, NoveltyConfig
from cloudclass.errors import DuplicateLabelError, UnknownClassError, UntrainedModelError

logger = logging.getLogger(__name__)

NEW_CLASS_PREFIX = "new class"


class Decision(str, Enum):
    DROP_DETECTED = "DROP_DETECTED"
    ABSORB = "ABSORB"


@dataclass(frozen=True)
class Confidence:
    lam: float
    class_index: int
    cloud_index: int


@dataclass
class ConfidenceTracker:
    """Recursive mean and variance of the winning confidence."""

    m: float = 3.0
    i: int = 0
    mean_conf: float = 0.0
    var_conf: float = 0.0

    @property
    def sigma(self) -> float:
        return math.sqrt(self.var_conf)

    @property
    def threshold(self) -> float:
        return self.mean_conf - self.m * self.sigma


@dataclass
class BufferEntry:
    z: np.ndarray
    lam: float
    seq: int


@dataclass
class OutlierBuffer:
    entries: list[BufferEntry] = field(default_factory=list)
    evicted: int = 0

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class FoundedClass:
    model: ClassModel
    seqs: list[int]


# Takes a candidate cloud (prototype, members) away from class formation.
ReleaseHook = Callable[[np.ndarray, list[BufferEntry]], bool]


def class_confidence(
    model: ClassModel, x: np.ndarray, scale: ConfidenceScale = "r-star"
) -> tuple[float, int]:
    """Best cloud density of one class on its feature mask."""
    if not model.clouds:
        raise UntrainedModelError(f"Class '{model.label}' has no data clouds")
    mask = model.feature_mask
    diff = (model.prototypes - np.asarray(x, dtype=float))[:, mask]
    dist_sq = np.sum(diff**2, axis=1)
    if scale == "radius":
        scales = np.array([c.radius_sq for c in model.clouds])
    else:
        scales = np.full(len(model.clouds), R_STAR_SQ)
    lam = 1.0 / (1.0 + dist_sq / scales)
    best = int(np.argmax(lam))
    return float(lam[best]), best


def confidence(
    models: Sequence[ClassModel], x: np.ndarray, scale: ConfidenceScale = "r-star"
) -> Confidence:
    """
    Highest cloud-level density over every class. Ties go to the lowest
    (class_id, cloud_id).
    """
    trained = sorted((m for m in models if m.clouds), key=lambda m: m.class_id)
    if not trained:
        raise UntrainedModelError("No trained classes to score against")
    best: Confidence | None = None
    for model in trained:
        lam, cloud = class_confidence(model, x, scale)
        if best is None or lam > best.lam:
            best = Confidence(lam=lam, class_index=model.class_id, cloud_index=cloud)
    assert best is not None
    return best


def update_tracker(t: ConfidenceTracker, lam: float) -> ConfidenceTracker:
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"Confidence must lie in (0, 1], got {lam}")
    t.i += 1
    previous = t.mean_conf
    t.mean_conf = ((t.i - 1) / t.i) * previous + lam / t.i
    t.var_conf = ((t.i - 1) / t.i) * t.var_conf + (lam - previous) * (
        lam - t.mean_conf
    ) / t.i
    t.var_conf = max(t.var_conf, 0.0)
    return t


def check_novelty(t: ConfidenceTracker, lam: float) -> Decision:
    if t.i < 2:
        raise ValueError("Need at least two tracked confidences before testing")
    if lam < t.threshold:
        return Decision.DROP_DETECTED
    return Decision.ABSORB


def buffer_outlier(
    buf: OutlierBuffer, x: np.ndarray, lam: float, seq: int, cfg: NoveltyConfig
) -> OutlierBuffer:
    buf.entries.append(BufferEntry(z=np.asarray(x, dtype=float), lam=lam, seq=seq))
    overflow = len(buf.entries) - cfg.buffer_expiry
    if overflow > 0:
        del buf.entries[:overflow]
        buf.evicted += overflow
        logger.info("Evicted %d expired sample(s) from the outlier buffer", overflow)
    return buf


def try_form_new_classes(
    buf: OutlierBuffer,
    cfg: NoveltyConfig,
    next_class_id: int,
    next_label: Callable[[], str],
    release: Optional[ReleaseHook] = None,
) -> list[FoundedClass]:
    """
    Clusters the buffer as a scratch class; every scratch cloud with enough
    support founds a new class from its members. Remaining entries inside a
    founded class's area of influence are claimed by it.

    A candidate cloud is offered to `release` first. When the hook takes it
    (its prototype lies in known territory) its entries leave the buffer
    without founding a class. A candidate inside a class founded earlier in
    the same pass joins that class.
    """
    if not buf.entries:
        return []
    samples = [e.z for e in buf.entries]
    scratch, assignment = grow_class(samples, class_id=-1, label="scratch")

    founded: list[FoundedClass] = []
    taken: set[int] = set()
    for index, cloud in enumerate(scratch.clouds):
        if cloud.support < cfg.kappa_min_support:
            continue
        members = [k for k, a in enumerate(assignment) if a == index]
        if release is not None and release(cloud.prototype, [buf.entries[k] for k in members]):
            taken.update(members)
            continue
        owner = _claiming_class(founded, cloud.prototype)
        if owner is not None:
            for k in members:
                absorb(owner.model, samples[k])
                owner.seqs.append(buf.entries[k].seq)
            taken.update(members)
            continue
        model, _ = grow_class(
            [samples[k] for k in members],
            class_id=next_class_id + len(founded),
            label=next_label(),
        )
        founded.append(FoundedClass(model=model, seqs=[buf.entries[k].seq for k in members]))
        taken.update(members)
        logger.info(
            "Formed '%s' from %d buffered samples", model.label, len(members)
        )

    for k, entry in enumerate(buf.entries):
        if k in taken or not founded:
            continue
        owner = _claiming_class(founded, entry.z)
        if owner is not None:
            absorb(owner.model, entry.z)
            owner.seqs.append(entry.seq)
            taken.add(k)
    buf.entries = [e for k, e in enumerate(buf.entries) if k not in taken]
    return founded


def _claiming_class(founded: list[FoundedClass], z: np.ndarray) -> FoundedClass | None:
    best, best_dist = None, np.inf
    for candidate in founded:
        dist = float(np.min(np.linalg.norm(candidate.model.prototypes - z, axis=1)))
        if dist <= R_STAR and dist < best_dist:
            best, best_dist = candidate, dist
    return best


def rename_class(
    classes: Mapping[str, ClassModel], old: str, new: str
) -> dict[str, ClassModel]:
    """Returns the class map with `old` relabeled to `new`, order preserved."""
    if old not in classes:
        raise UnknownClassError(f"Unknown class '{old}'")
    if new != old and new in classes:
        raise DuplicateLabelError(f"Label '{new}' is already in use")
    renamed: dict[str, ClassModel] = {}
    for label, model in classes.items():
        if label == old:
            model.label = new
            renamed[new] = model
        else:
            renamed[label] = model
    return renamed
