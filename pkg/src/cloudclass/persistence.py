"""
Versioned, checksummed model files.

A model file is one header line followed by the JSON payload:

    cloudclass-model v1 sha256=<hex digest of the payload>
    { ...pydantic-serialized ModelState... }
"""

import logging
import re
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from cloudclass.classifier import XClassModel
from cloudclass.clouds import ClassModel, DataCloud
from cloudclass.config import ClassifierConfig
from cloudclass.density import FeatureRanking
from cloudclass.errors import ModelChecksumError, ModelFileError, ModelVersionError
from cloudclass.novelty import BufferEntry, ConfidenceTracker, OutlierBuffer
from cloudclass.preprocess import RunningStats
from cloudclass.utils import sha256_hex

logger = logging.getLogger(__name__)

MAGIC = "cloudclass-model"
FORMAT_VERSION = 1
HEADER_RE = re.compile(rf"^{MAGIC} v(\d+) sha256=([0-9a-f]{{64}})$")


class StatsState(BaseModel):
    count: int = 0
    mean: list[float] = Field(default_factory=list)
    mean_sq: list[float] = Field(default_factory=list)
    std_min: list[float] = Field(default_factory=list)
    std_max: list[float] = Field(default_factory=list)

    @classmethod
    def of(cls, stats: RunningStats) -> "StatsState":
        return cls(
            count=stats.count,
            mean=stats.mean.tolist(),
            mean_sq=stats.mean_sq.tolist(),
            std_min=stats.std_min.tolist(),
            std_max=stats.std_max.tolist(),
        )

    def restore(self) -> RunningStats:
        stats = RunningStats(len(self.mean)) if self.mean else RunningStats()
        stats.count = self.count
        if self.mean:
            stats.mean = np.array(self.mean, dtype=float)
            stats.mean_sq = np.array(self.mean_sq, dtype=float)
            stats.std_min = np.array(self.std_min, dtype=float)
            stats.std_max = np.array(self.std_max, dtype=float)
        return stats


class CloudState(BaseModel):
    cloud_id: int
    prototype: list[float]
    support: int = Field(ge=1)
    radius_sq: float = Field(gt=0)
    member_sq_norm: float


class ClassState(BaseModel):
    class_id: int
    label: str
    clouds: list[CloudState]
    class_mean: list[float]
    class_mean_sq_norm: float
    sample_count: int
    lambda_cum: list[float]
    ranking_count: int
    feature_mask: list[bool]
    next_cloud_id: int

    @classmethod
    def of(cls, model: ClassModel) -> "ClassState":
        return cls(
            class_id=model.class_id,
            label=model.label,
            clouds=[
                CloudState(
                    cloud_id=c.cloud_id,
                    prototype=c.prototype.tolist(),
                    support=c.support,
                    radius_sq=c.radius_sq,
                    member_sq_norm=c.member_sq_norm,
                )
                for c in model.clouds
            ],
            class_mean=model.class_mean.tolist(),
            class_mean_sq_norm=model.class_mean_sq_norm,
            sample_count=model.sample_count,
            lambda_cum=model.feature_ranking.lambda_cum.tolist(),
            ranking_count=model.feature_ranking.sample_count,
            feature_mask=model.feature_mask.tolist(),
            next_cloud_id=model.next_cloud_id,
        )

    def restore(self) -> ClassModel:
        dim = len(self.class_mean)
        return ClassModel(
            class_id=self.class_id,
            label=self.label,
            dim=dim,
            clouds=[
                DataCloud(
                    cloud_id=c.cloud_id,
                    prototype=np.array(c.prototype, dtype=float),
                    support=c.support,
                    radius_sq=c.radius_sq,
                    member_sq_norm=c.member_sq_norm,
                )
                for c in self.clouds
            ],
            class_mean=np.array(self.class_mean, dtype=float),
            class_mean_sq_norm=self.class_mean_sq_norm,
            sample_count=self.sample_count,
            feature_ranking=FeatureRanking(
                dim=dim,
                class_id=self.class_id,
                sample_count=self.ranking_count,
                lambda_cum=np.array(self.lambda_cum, dtype=float),
            ),
            feature_mask=np.array(self.feature_mask, dtype=bool),
            next_cloud_id=self.next_cloud_id,
        )


class TrackerState(BaseModel):
    i: int = 0
    mean_conf: float = 0.0
    var_conf: float = 0.0


class BufferEntryState(BaseModel):
    z: list[float]
    lam: float
    seq: int


class ModelState(BaseModel):
    config: ClassifierConfig
    schema_names: Optional[list[str]] = None
    stats: StatsState
    classes: list[ClassState]
    tracker: TrackerState
    buffer: list[BufferEntryState]
    evicted: int = 0
    next_class_id: int = 0
    auto_label_count: int = 0
    seq: int = 0


def to_state(model: XClassModel) -> ModelState:
    return ModelState(
        config=model.config,
        schema_names=model.schema,
        stats=StatsState.of(model.stats),
        classes=[ClassState.of(m) for m in model.classes.values()],
        tracker=TrackerState(
            i=model.tracker.i,
            mean_conf=model.tracker.mean_conf,
            var_conf=model.tracker.var_conf,
        ),
        buffer=[
            BufferEntryState(z=e.z.tolist(), lam=e.lam, seq=e.seq)
            for e in model.buffer.entries
        ],
        evicted=model.buffer.evicted,
        next_class_id=model.next_class_id,
        auto_label_count=model.auto_label_count,
        seq=model.seq,
    )


def from_state(state: ModelState, config: Optional[ClassifierConfig] = None) -> XClassModel:
    model = XClassModel(config=config or state.config, schema=state.schema_names)
    model.stats = state.stats.restore()
    model.classes = {c.label: c.restore() for c in state.classes}
    model.tracker = ConfidenceTracker(
        m=model.config.novelty.m,
        i=state.tracker.i,
        mean_conf=state.tracker.mean_conf,
        var_conf=state.tracker.var_conf,
    )
    model.buffer = OutlierBuffer(
        entries=[
            BufferEntry(z=np.array(e.z, dtype=float), lam=e.lam, seq=e.seq)
            for e in state.buffer
        ],
        evicted=state.evicted,
    )
    model.next_class_id = state.next_class_id
    model.auto_label_count = state.auto_label_count
    model.seq = state.seq
    return model


def dumps_model(model: XClassModel) -> str:
    payload = to_state(model).model_dump_json(indent=1)
    return f"{MAGIC} v{FORMAT_VERSION} sha256={sha256_hex(payload)}\n{payload}\n"


def loads_model(text: str, config: Optional[ClassifierConfig] = None) -> XClassModel:
    header, _, payload = text.partition("\n")
    match = HEADER_RE.match(header.strip())
    if not match:
        raise ModelFileError("Not a cloudclass model file (bad header line)")
    version, digest = int(match.group(1)), match.group(2)
    if version != FORMAT_VERSION:
        raise ModelVersionError(
            f"Model file version {version} is not supported (expected {FORMAT_VERSION})"
        )
    payload = payload.removesuffix("\n")
    if sha256_hex(payload) != digest:
        raise ModelChecksumError("Model file checksum mismatch (truncated or edited?)")
    try:
        state = ModelState.model_validate_json(payload)
    except ValidationError as e:
        raise ModelFileError(f"Model payload is invalid: {e}") from e
    return from_state(state, config)


def save_model(model: XClassModel, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_model(model), encoding="utf-8")
    logger.info("Saved model with %d class(es) to %s", len(model.classes), path)
    return path


def load_model(path: Path, config: Optional[ClassifierConfig] = None) -> XClassModel:
    path = Path(path)
    if not path.exists():
        raise ModelFileError(f"Model file not found: {path}")
    model = loads_model(path.read_text(encoding="utf-8"), config)
    logger.info("Loaded model with %d class(es) from %s", len(model.classes), path)
    return model
