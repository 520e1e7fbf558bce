"""
IF-THEN rule export.

One rule per class; every data cloud is one antecedent clause:

    R1: IF (x ~ p1) OR (x ~ p2) THEN 'cars'
"""

from typing import Optional

import numpy as np
from pydantic import BaseModel, Field

from cloudclass.classifier import XClassModel
from cloudclass.clouds import ClassModel, DataCloud
from cloudclass.config import ClassifierConfig, ConfidenceScale
from cloudclass.density import FeatureRanking
from cloudclass.errors import UntrainedModelError
from cloudclass.persistence import StatsState
from cloudclass.preprocess import destandardize

RULES_VERSION = 1


class Antecedent(BaseModel):
    cloud_id: int
    focal_point: list[float] = Field(description="Prototype in normalized units")
    prototype: list[float] = Field(description="Prototype in raw feature units")
    support: int
    radius_sq: float
    scatter: float = Field(
        default=0.0, description="Mean squared member distance from the prototype"
    )


class ClassRule(BaseModel):
    label: str
    class_id: int
    sample_count: int
    selected_features: list[str]
    feature_mask: list[bool]
    lambda_cum: list[float]
    antecedents: list[Antecedent]


class RuleDocument(BaseModel):
    version: int = RULES_VERSION
    feature_names: list[str]
    confidence_scale: ConfidenceScale = "r-star"
    preprocessing: StatsState
    rules: list[ClassRule]


def feature_names(model: XClassModel) -> list[str]:
    if model.schema is not None:
        return list(model.schema)
    return [f"f{i}" for i in range(model.dim or 0)]


def _class_rule(model: XClassModel, cls: ClassModel, names: list[str]) -> ClassRule:
    return ClassRule(
        label=cls.label,
        class_id=cls.class_id,
        sample_count=cls.sample_count,
        selected_features=[n for n, keep in zip(names, cls.feature_mask) if keep],
        feature_mask=cls.feature_mask.tolist(),
        lambda_cum=cls.feature_ranking.lambda_cum.tolist(),
        antecedents=[
            Antecedent(
                cloud_id=cloud.cloud_id,
                focal_point=cloud.prototype.tolist(),
                prototype=destandardize(model.stats, cloud.prototype).tolist(),
                support=cloud.support,
                radius_sq=cloud.radius_sq,
                scatter=cloud.scatter,
            )
            for cloud in cls.clouds
        ],
    )


def export_rules(model: XClassModel) -> RuleDocument:
    """Rule document of every class, ordered by class id."""
    if not model.classes:
        raise UntrainedModelError("The model has no classes to export")
    names = feature_names(model)
    ordered = sorted(model.classes.values(), key=lambda m: m.class_id)
    return RuleDocument(
        feature_names=names,
        confidence_scale=model.config.confidence_scale,
        preprocessing=StatsState.of(model.stats),
        rules=[_class_rule(model, cls, names) for cls in ordered],
    )


def render_rules_text(doc: RuleDocument, precision: int = 4) -> str:
    lines: list[str] = []
    for number, rule in enumerate(doc.rules, start=1):
        clauses = " OR ".join(
            f"(x ~ p{k})" for k in range(1, len(rule.antecedents) + 1)
        )
        lines.append(f"R{number}: IF {clauses} THEN '{rule.label}'")
        lines.append(f"    features: {', '.join(rule.selected_features)}")
        for k, a in enumerate(rule.antecedents, start=1):
            coords = ", ".join(
                f"{name}={value:.{precision}f}"
                for name, value in zip(doc.feature_names, a.prototype)
            )
            lines.append(
                f"    p{k} = ({coords})  support={a.support}"
                f"  radius={np.sqrt(a.radius_sq):.{precision}f}"
                f"  scatter={a.scatter:.{precision}f}"
            )
    return "\n".join(lines) + "\n"


def _restore_class(rule: ClassRule) -> ClassModel:
    dim = len(rule.feature_mask)
    clouds = [
        DataCloud(
            cloud_id=a.cloud_id,
            prototype=np.array(a.focal_point, dtype=float),
            support=a.support,
            radius_sq=a.radius_sq,
            member_sq_norm=a.scatter + float(np.dot(a.focal_point, a.focal_point)),
        )
        for a in rule.antecedents
    ]
    weights = np.array([c.support for c in clouds], dtype=float)
    points = np.array([c.prototype for c in clouds]).reshape(-1, dim)
    # clouds partition the members, so their moments pool into the class moments
    return ClassModel(
        class_id=rule.class_id,
        label=rule.label,
        dim=dim,
        clouds=clouds,
        class_mean=np.average(points, axis=0, weights=weights),
        class_mean_sq_norm=float(
            np.average([c.member_sq_norm for c in clouds], weights=weights)
        ),
        sample_count=rule.sample_count,
        feature_ranking=FeatureRanking(
            dim=dim,
            class_id=rule.class_id,
            sample_count=rule.sample_count,
            lambda_cum=np.array(rule.lambda_cum, dtype=float),
        ),
        feature_mask=np.array(rule.feature_mask, dtype=bool),
        next_cloud_id=max((c.cloud_id for c in clouds), default=-1) + 1,
    )


def import_rules(
    doc: RuleDocument, config: Optional[ClassifierConfig] = None
) -> XClassModel:
    """
    Rebuilds a predict-capable model from a rule document. Confidence
    statistics are not part of the rules, so the tracker starts empty.
    """
    config = config or ClassifierConfig()
    if config.confidence_scale != doc.confidence_scale:
        config = config.model_copy(update={"confidence_scale": doc.confidence_scale})
    model = XClassModel(config=config, schema=doc.feature_names)
    model.stats = doc.preprocessing.restore()
    for rule in doc.rules:
        model.classes[rule.label] = _restore_class(rule)
    model.next_class_id = max((r.class_id for r in doc.rules), default=-1) + 1
    return model
