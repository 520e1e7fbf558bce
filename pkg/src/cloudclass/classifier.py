"""
The exploratory classifier: priming, streaming learning with novelty
detection, winners-take-all prediction and per-class feature selection.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from cloudclass import novelty
from cloudclass.clouds import ClassModel, absorb, init_class, outside_influence
from cloudclass.config import ClassifierConfig, FeaturePolicy
from cloudclass.density import (
    accumulate_feature_contribution,
    per_feature_density,
    typicality,
)
from cloudclass.errors import (
    DegenerateFeatureError,
    UnknownClassError,
    UntrainedModelError,
)
from cloudclass.novelty import (
    BufferEntry,
    ConfidenceTracker,
    Decision,
    OutlierBuffer,
    buffer_outlier,
    check_novelty,
    class_confidence,
    try_form_new_classes,
    update_tracker,
)
from cloudclass.preprocess import RunningStats, normalize, process, standardize

logger = logging.getLogger(__name__)

Vector = Sequence[float] | np.ndarray


class EventKind(str, Enum):
    LABELED = "LABELED"
    ABSORBED = "ABSORBED"
    OUTLIER_SKIPPED = "OUTLIER_SKIPPED"
    NOVELTY_BUFFERED = "NOVELTY_BUFFERED"
    NEW_CLASS_CREATED = "NEW_CLASS_CREATED"


@dataclass
class Event:
    seq: int
    kind: EventKind
    label: Optional[str] = None
    lam: Optional[float] = None
    mean_conf: Optional[float] = None
    threshold: Optional[float] = None
    density: Optional[float] = None
    cloud_created: bool = False
    founders: dict[str, list[int]] = field(default_factory=dict)


@dataclass(frozen=True)
class Prediction:
    label: str
    lambdas: dict[str, float]
    typicality: dict[str, float]


def feature_mask_for(
    lambda_cum: np.ndarray, policy: FeaturePolicy, top_k: int = 1
) -> np.ndarray:
    """
    mean: keep features with Lambda at or above the mean; top-k: keep the k
    highest; off: keep all. The top-ranked feature is always kept.
    """
    dim = lambda_cum.size
    if policy == "off":
        return np.ones(dim, dtype=bool)
    order = np.argsort(-lambda_cum, kind="stable")
    if policy == "top-k":
        mask = np.zeros(dim, dtype=bool)
        mask[order[: min(top_k, dim)]] = True
        return mask
    mask = lambda_cum >= lambda_cum.mean() - 1e-12
    mask[order[0]] = True
    return mask


class XClassModel:
    """
    Streaming classifier built from per-class data clouds.

    Example:
        model = XClassModel()
        model.prime([(x1, "cars"), (x2, "cars")])
        event = model.learn_stream(x3)
        model.predict(x4).label
    """

    def __init__(
        self,
        config: Optional[ClassifierConfig] = None,
        schema: Optional[list[str]] = None,
    ):
        self.config = config or ClassifierConfig()
        self.schema = list(schema) if schema is not None else None
        self.stats = RunningStats()
        self.classes: dict[str, ClassModel] = {}
        self.tracker = ConfidenceTracker(m=self.config.novelty.m)
        self.buffer = OutlierBuffer()
        self.next_class_id = 0
        self.auto_label_count = 0
        self.seq = 0

    # --- preprocessing ---
    def fit_preprocessing(self, rows: Iterable[Vector]) -> "XClassModel":
        """Builds batch statistics from an unlabeled pool; labels are not used."""
        self.stats = RunningStats.from_batch(rows)
        constant = self.stats.constant_features()
        if constant:
            if self.config.strict:
                raise DegenerateFeatureError(constant[0], "zero variance")
            logger.warning("Constant features reported: %s", constant)
        return self

    def _ingest(self, x: Vector) -> tuple[np.ndarray, bool]:
        """Updates the running moments (unless frozen) and standardizes x."""
        raw = self.stats.check_dim(np.asarray(x, dtype=float))
        if not self.config.freeze_stats:
            self.stats.update(raw, track_extrema=False)
        z, outlier = standardize(self.stats, raw, strict=self.config.strict)
        if not outlier and not self.config.freeze_stats:
            self.stats.extend_extrema(z)
        return z, outlier

    # --- learning ---
    def prime(
        self,
        samples: Sequence[tuple[Vector, str]],
        pool: Optional[Iterable[Vector]] = None,
    ) -> "XClassModel":
        """
        Builds the model from labeled samples. Statistics come from `pool`
        when given, otherwise from the priming rows.
        """
        if not samples:
            raise ValueError("Priming needs at least one labeled sample")
        self.fit_preprocessing(pool if pool is not None else [x for x, _ in samples])
        self.classes = {}
        self.tracker = ConfidenceTracker(m=self.config.novelty.m)
        self.buffer = OutlierBuffer()
        self.next_class_id = 0

        kept: list[np.ndarray] = []
        for x, label in samples:
            z, outlier = standardize(self.stats, x, strict=self.config.strict)
            if outlier:
                continue
            n = normalize(self.stats, z, strict=self.config.strict)
            self._absorb_labeled(n, str(label))
            kept.append(n)
        if not self.classes:
            raise UntrainedModelError("Every priming sample was gated as an outlier")

        for n in kept:
            update_tracker(self.tracker, self._confidence(n).lam)
        logger.info(
            "Primed %d class(es) from %d sample(s)", len(self.classes), len(kept)
        )
        return self

    def learn_labeled(self, x: Vector, label: str) -> Event:
        self.seq += 1
        z, outlier = self._ingest(x)
        if outlier:
            return Event(seq=self.seq, kind=EventKind.OUTLIER_SKIPPED)
        n = normalize(self.stats, z, strict=self.config.strict)
        lam = self._confidence(n).lam if self.classes else None
        created = self._absorb_labeled(n, str(label))
        if lam is not None:
            update_tracker(self.tracker, lam)
        return Event(
            seq=self.seq,
            kind=EventKind.LABELED,
            label=str(label),
            lam=lam,
            cloud_created=created,
        )

    def learn_stream(self, x: Vector) -> Event:
        """
        Processes one unlabeled sample: outlier gate, confidence, then either
        buffering (with possible class formation) or absorption into the
        winning class.
        """
        if not self.classes:
            raise UntrainedModelError("Prime the model before streaming")
        self.seq += 1
        z, outlier = self._ingest(x)
        if outlier:
            return Event(seq=self.seq, kind=EventKind.OUTLIER_SKIPPED)
        n = normalize(self.stats, z, strict=self.config.strict)

        best = self._confidence(n)
        winner = self.class_by_id(best.class_index)
        event = Event(
            seq=self.seq,
            kind=EventKind.ABSORBED,
            label=winner.label,
            lam=best.lam,
            mean_conf=self.tracker.mean_conf,
            threshold=self.tracker.threshold if self.tracker.i >= 2 else None,
            density=winner.density(n),
        )

        # a confident sample outside every area of influence of its winner is
        # still unfamiliar; unlabeled data never grows a class into new ground
        drop = self.tracker.i >= 2 and (
            check_novelty(self.tracker, best.lam) == Decision.DROP_DETECTED
            or outside_influence(winner, n)
        )
        if drop:
            buffer_outlier(self.buffer, n, best.lam, self.seq, self.config.novelty)
            event.kind = EventKind.NOVELTY_BUFFERED
            event.label = None
            founded = self._form_new_classes()
            if founded:
                event.kind = EventKind.NEW_CLASS_CREATED
                event.founders = founded
                event.label = next(iter(founded))
            return event

        event.cloud_created = self._absorb(winner, n)
        update_tracker(self.tracker, best.lam)
        return event

    def _form_new_classes(self) -> dict[str, list[int]]:
        if len(self.buffer) < self.config.novelty.kappa_min_support:
            return {}
        by_seq = {e.seq: e.z for e in self.buffer.entries}
        founded = try_form_new_classes(
            self.buffer,
            self.config.novelty,
            self.next_class_id,
            self._next_label,
            release=self._release_known,
        )
        result: dict[str, list[int]] = {}
        for item in founded:
            model = item.model
            self.classes[model.label] = model
            for s in item.seqs:
                self._accumulate_features(model, by_seq[s])
            self.next_class_id = max(self.next_class_id, model.class_id + 1)
            result[model.label] = list(item.seqs)
        return result

    def _release_known(self, prototype: np.ndarray, entries: list[BufferEntry]) -> bool:
        """
        A buffered group whose prototype the known classes explain with
        ordinary confidence is a pile-up of tail samples, not a new class. Its
        members are absorbed into their winning classes.
        """
        best = self._confidence(prototype)
        if check_novelty(self.tracker, best.lam) == Decision.DROP_DETECTED:
            return False
        if outside_influence(self.class_by_id(best.class_index), prototype):
            return False
        for entry in entries:
            member = self._confidence(entry.z)
            self._absorb(self.class_by_id(member.class_index), entry.z)
            update_tracker(self.tracker, member.lam)
        logger.info("Released %d buffered sample(s) to known classes", len(entries))
        return True

    def _next_label(self) -> str:
        while True:
            self.auto_label_count += 1
            label = f"{novelty.NEW_CLASS_PREFIX} {self.auto_label_count}"
            if label not in self.classes:
                return label

    def _absorb_labeled(self, n: np.ndarray, label: str) -> bool:
        if label not in self.classes:
            model = init_class(n, self.next_class_id, label)
            self.next_class_id += 1
            self.classes[label] = model
            self._accumulate_features(model, n)
            return True
        return self._absorb(self.classes[label], n)

    def _absorb(self, model: ClassModel, n: np.ndarray) -> bool:
        kind, _ = absorb(model, n)
        self._accumulate_features(model, n)
        return kind == "created"

    def _accumulate_features(self, model: ClassModel, n: np.ndarray) -> None:
        d = per_feature_density(n, model.class_mean, self.stats.normalized_variance())
        accumulate_feature_contribution(model.feature_ranking, d)
        if self.config.shared_mask:
            self._refresh_shared_mask()
        else:
            self.select_features(model.label)

    # --- feature selection ---
    def select_features(self, label: str) -> np.ndarray:
        model = self._get(label)
        ranking = model.feature_ranking
        if ranking.sample_count == 0:
            model.feature_mask = np.ones(model.dim, dtype=bool)
        else:
            model.feature_mask = feature_mask_for(
                ranking.lambda_cum, self.config.feature_policy, self.config.top_k
            )
        return model.feature_mask

    def _refresh_shared_mask(self) -> None:
        ranked = [m.feature_ranking.lambda_cum for m in self.classes.values()
                  if m.feature_ranking.sample_count > 0]
        if not ranked:
            return
        mask = feature_mask_for(
            np.mean(ranked, axis=0), self.config.feature_policy, self.config.top_k
        )
        for model in self.classes.values():
            model.feature_mask = mask.copy()

    # --- prediction ---
    def _confidence(self, n: np.ndarray) -> novelty.Confidence:
        return novelty.confidence(
            list(self.classes.values()), n, self.config.confidence_scale
        )

    def predict(self, x: Vector) -> Prediction:
        """Winners-take-all over per-class confidence; never mutates the model."""
        if not self.classes:
            raise UntrainedModelError("The model has no classes yet")
        n = process(self.stats, x, strict=self.config.strict).normalized
        ordered = sorted(self.classes.values(), key=lambda m: m.class_id)
        lams = np.array(
            [class_confidence(m, n, self.config.confidence_scale)[0] for m in ordered]
        )
        tau = typicality(lams)
        best = int(np.argmax(lams))
        return Prediction(
            label=ordered[best].label,
            lambdas={m.label: float(v) for m, v in zip(ordered, lams)},
            typicality={m.label: float(v) for m, v in zip(ordered, tau)},
        )

    def predict_labels(self, rows: Iterable[Vector]) -> list[str]:
        return [self.predict(row).label for row in rows]

    # --- class management ---
    def _get(self, label: str) -> ClassModel:
        try:
            return self.classes[label]
        except KeyError:
            raise UnknownClassError(f"Unknown class '{label}'") from None

    def class_by_id(self, class_id: int) -> ClassModel:
        for model in self.classes.values():
            if model.class_id == class_id:
                return model
        raise UnknownClassError(f"Unknown class id {class_id}")

    def rename_class(self, old: str, new: str) -> ClassModel:
        self.classes = novelty.rename_class(self.classes, old, new)
        return self.classes[new]

    @property
    def labels(self) -> list[str]:
        return list(self.classes)

    @property
    def dim(self) -> Optional[int]:
        return self.stats.dim
