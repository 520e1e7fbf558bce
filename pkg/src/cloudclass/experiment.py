"""
Prime, stream and evaluate harness.

A schedule is an ordered list of phases. Each phase draws samples of its
classes from the training split; the labeled share of the first phase primes
the model, later labeled shares are learned with their labels and everything
else streams unlabeled.
"""

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from cloudclass.classifier import EventKind, XClassModel
from cloudclass.config import ClassifierConfig
from cloudclass.datasets import Dataset
from cloudclass.errors import ScheduleError
from cloudclass.rules import RuleDocument, export_rules, render_rules_text

logger = logging.getLogger(__name__)

DROP_KINDS = (EventKind.NOVELTY_BUFFERED, EventKind.NEW_CLASS_CREATED)
FLOAT_FORMAT = "%.10g"

TIMELINE_COLUMNS = ["step", "seq", "known_classes"]
TRACE_COLUMNS = [
    "step", "seq", "true_label", "lam", "mean_conf", "threshold", "density", "decision",
]
EVENT_COLUMNS = [
    "step", "seq", "kind", "true_label", "lam", "threshold", "new_class", "founders",
]
FEATURE_COLUMNS = ["class", "rank", "feature", "lambda", "selected"]
CURVE_COLUMNS = [
    "labeled_fraction", "labeled_samples", "accuracy", "known_classes",
    "discovered_classes", "drops",
]


class Phase(BaseModel):
    classes: list[str] = Field(min_length=1)
    labeled_fraction: float = Field(default=0.0, ge=0.0, le=1.0)
    count: Optional[int] = Field(default=None, gt=0)


class StreamSchedule(BaseModel):
    phases: list[Phase] = Field(min_length=1)

    @property
    def classes(self) -> list[str]:
        return list(dict.fromkeys(c for p in self.phases for c in p.classes))


def default_schedule(
    classes: Sequence[str], prime_classes: Sequence[str], prime_fraction: float = 0.8
) -> StreamSchedule:
    """Prime on `prime_classes` at `prime_fraction`, then stream the others unlabeled."""
    primed = list(prime_classes)
    rest = [c for c in classes if c not in primed]
    phases = [Phase(classes=primed, labeled_fraction=prime_fraction)]
    if rest:
        phases.append(Phase(classes=rest, labeled_fraction=0.0))
    return StreamSchedule(phases=phases)


@dataclass
class Report:
    accuracy: Optional[float]
    evaluated: int
    correct: int
    labeled_samples: int
    confusion: pd.DataFrame
    known_classes: list[str]
    primed_classes: list[str]
    discovered_classes: int
    class_mapping: dict[str, str]
    detection_delay: dict[str, Optional[int]]
    timeline: pd.DataFrame
    trace: pd.DataFrame
    events: pd.DataFrame
    features: pd.DataFrame
    rules: RuleDocument
    model: XClassModel = field(repr=False)

    @property
    def new_class_events(self) -> int:
        if self.events.empty:
            return 0
        return int((self.events["kind"] == EventKind.NEW_CLASS_CREATED.value).sum())

    def summary(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "evaluated": self.evaluated,
            "correct": self.correct,
            "labeled_samples": self.labeled_samples,
            "known_classes": self.known_classes,
            "primed_classes": self.primed_classes,
            "discovered_classes": self.discovered_classes,
            "class_mapping": self.class_mapping,
            "detection_delay": self.detection_delay,
            "stream_samples": len(self.timeline),
            "new_class_events": self.new_class_events,
            "drops": len(self.events),
        }


def stratified_split(
    labels: Sequence[str], test_fraction: float, rng: np.random.Generator
) -> tuple[list[int], list[int]]:
    if not 0.0 <= test_fraction < 1.0:
        raise ScheduleError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    by_class: dict[str, list[int]] = defaultdict(list)
    for i, label in enumerate(labels):
        by_class[label].append(i)
    train: list[int] = []
    test: list[int] = []
    for indices in by_class.values():
        order = [indices[k] for k in rng.permutation(len(indices))]
        n_test = min(int(round(test_fraction * len(order))), len(order) - 1)
        test.extend(order[:n_test])
        train.extend(order[n_test:])
    return train, test


def plan_phases(
    labels: Sequence[str],
    train: Sequence[int],
    schedule: StreamSchedule,
    rng: np.random.Generator,
) -> list[list[tuple[int, bool]]]:
    """Per phase the drawn (row index, labeled) pairs in stream order."""
    remaining: dict[str, list[int]] = defaultdict(list)
    for i in train:
        remaining[labels[i]].append(i)

    plan = []
    for number, phase in enumerate(schedule.phases, start=1):
        pool = [i for c in phase.classes for i in remaining[c]]
        order = [pool[k] for k in rng.permutation(len(pool))]
        if phase.count is not None:
            if phase.count > len(order):
                raise ScheduleError(
                    f"Phase {number} asks for {phase.count} samples, "
                    f"only {len(order)} remain"
                )
            order = order[: phase.count]
        drawn = set(order)
        for c in phase.classes:
            remaining[c] = [i for i in remaining[c] if i not in drawn]

        per_class = Counter(labels[i] for i in order)
        floor = 1 if phase.labeled_fraction > 0 else 0
        quota = {
            c: max(int(round(phase.labeled_fraction * n)), floor)
            for c, n in per_class.items()
        }
        steps = []
        for i in order:
            labeled = quota[labels[i]] > 0
            if labeled:
                quota[labels[i]] -= 1
            steps.append((i, labeled))
        plan.append(steps)
    return plan


def _validate(dataset: Dataset, schedule: StreamSchedule) -> list[str]:
    if not dataset.labeled:
        raise ScheduleError("Experiments need a labeled dataset")
    assert dataset.labels is not None
    missing = [c for c in schedule.classes if c not in dataset.classes]
    if missing:
        raise ScheduleError(f"Schedule classes missing from the dataset: {missing}")
    return dataset.labels


def _majority(votes: Counter, order: Sequence[str]) -> Optional[str]:
    if not votes:
        return None
    top = max(votes.values())
    return next(c for c in order if votes.get(c, 0) == top)


def run_experiment(
    dataset: Dataset,
    schedule: StreamSchedule,
    config: Optional[ClassifierConfig] = None,
    seed: int = 7,
    test_fraction: float = 0.3,
) -> Report:
    labels = _validate(dataset, schedule)
    rng = np.random.default_rng(seed)
    train, test = stratified_split(labels, test_fraction, rng)
    plan = plan_phases(labels, train, schedule, rng)

    prime_rows = [(dataset.rows[i], labels[i]) for i, lab in plan[0] if lab]
    if not prime_rows:
        raise ScheduleError("The first phase has no labeled samples to prime with")

    model = XClassModel(config=config, schema=dataset.schema)
    model.prime(prime_rows, pool=dataset.rows[sorted(train)])
    supervised = set(model.labels)
    primed = list(model.labels)

    trace, timeline, events = [], [], []
    truth_by_seq: dict[int, str] = {}
    votes: dict[str, Counter] = defaultdict(Counter)
    seen: Counter = Counter()
    delay: dict[str, Optional[int]] = {
        c: None for c in dataset.classes if c not in supervised
    }

    stream = [(i, lab) for i, lab in plan[0] if not lab]
    stream += [step for steps in plan[1:] for step in steps]
    for step, (i, lab) in enumerate(stream, start=1):
        truth = labels[i]
        if lab:
            event = model.learn_labeled(dataset.rows[i], truth)
            supervised.add(truth)
        else:
            seen[truth] += 1
            event = model.learn_stream(dataset.rows[i])
        truth_by_seq[event.seq] = truth

        if event.kind == EventKind.ABSORBED and event.label is not None:
            votes[event.label][truth] += 1
        for new_label, seqs in event.founders.items():
            votes[new_label].update(truth_by_seq[s] for s in seqs)
        if event.kind in DROP_KINDS:
            if truth in delay and delay[truth] is None:
                delay[truth] = seen[truth]
            events.append({
                "step": step,
                "seq": event.seq,
                "kind": event.kind.value,
                "true_label": truth,
                "lam": event.lam,
                "threshold": event.threshold,
                "new_class": event.label or "",
                "founders": sum(len(s) for s in event.founders.values()),
            })
        if event.lam is not None:
            trace.append({
                "step": step,
                "seq": event.seq,
                "true_label": truth,
                "lam": event.lam,
                "mean_conf": event.mean_conf,
                "threshold": event.threshold,
                "density": event.density,
                "decision": event.kind.value,
            })
        timeline.append({"step": step, "seq": event.seq, "known_classes": len(model.classes)})

    mapping: dict[str, str] = {}
    for label in model.labels:
        if label in supervised:
            mapping[label] = label
        else:
            mapping[label] = _majority(votes[label], dataset.classes) or label

    truth_classes = dataset.classes
    test_truth = [labels[i] for i in test]
    predicted = [mapping[p] for p in model.predict_labels(dataset.rows[test])] if test else []
    columns = truth_classes + sorted({p for p in predicted if p not in truth_classes})
    confusion = pd.DataFrame(0, index=truth_classes, columns=columns, dtype=int)
    for t, p in zip(test_truth, predicted):
        confusion.loc[t, p] += 1
    confusion.index.name = "true"
    correct = sum(t == p for t, p in zip(test_truth, predicted))

    names = model.schema or [f"f{k}" for k in range(dataset.rows.shape[1])]
    features = []
    for cls in sorted(model.classes.values(), key=lambda m: m.class_id):
        for rank, f in enumerate(cls.feature_ranking.ranked(), start=1):
            features.append({
                "class": cls.label,
                "rank": rank,
                "feature": names[f],
                "lambda": float(cls.feature_ranking.lambda_cum[f]),
                "selected": bool(cls.feature_mask[f]),
            })

    report = Report(
        accuracy=correct / len(test) if test else None,
        evaluated=len(test),
        correct=correct,
        labeled_samples=len(prime_rows) + sum(1 for _, lab in stream if lab),
        confusion=confusion,
        known_classes=model.labels,
        primed_classes=primed,
        discovered_classes=sum(1 for label in model.labels if label not in supervised),
        class_mapping=mapping,
        detection_delay=delay,
        timeline=pd.DataFrame(timeline, columns=TIMELINE_COLUMNS),
        trace=pd.DataFrame(trace, columns=TRACE_COLUMNS),
        events=pd.DataFrame(events, columns=EVENT_COLUMNS),
        features=pd.DataFrame(features, columns=FEATURE_COLUMNS),
        rules=export_rules(model),
        model=model,
    )
    logger.info(
        "Experiment finished: accuracy=%s discovered=%d",
        report.accuracy,
        report.discovered_classes,
    )
    return report


def learning_curve(
    dataset: Dataset,
    fractions: Sequence[float],
    config: Optional[ClassifierConfig] = None,
    seed: int = 7,
    test_fraction: float = 0.3,
) -> pd.DataFrame:
    """
    Runs one single-phase experiment over every class per labeled fraction.
    The labeled share of each class primes the model and the rest streams
    unlabeled, so the rows trace accuracy against the amount of supervision.
    """
    if not fractions:
        raise ScheduleError("A learning curve needs at least one labeled fraction")
    if not dataset.labeled:
        raise ScheduleError("Experiments need a labeled dataset")
    rows = []
    for fraction in fractions:
        schedule = StreamSchedule(
            phases=[Phase(classes=dataset.classes, labeled_fraction=fraction)]
        )
        report = run_experiment(dataset, schedule, config, seed, test_fraction)
        rows.append({
            "labeled_fraction": fraction,
            "labeled_samples": report.labeled_samples,
            "accuracy": report.accuracy,
            "known_classes": len(report.known_classes),
            "discovered_classes": report.discovered_classes,
            "drops": len(report.events),
        })
        logger.info("Labeled fraction %g: accuracy=%s", fraction, report.accuracy)
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def write_learning_curve(curve: pd.DataFrame, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "learning_curve.csv"
    curve.to_csv(path, index=False, lineterminator="\n", float_format=FLOAT_FORMAT)
    return path


def render_report_text(report: Report) -> str:
    accuracy = "n/a" if report.accuracy is None else f"{report.accuracy:.4f}"
    lines = [
        f"accuracy: {accuracy} ({report.correct}/{report.evaluated})",
        f"labeled samples: {report.labeled_samples}",
        f"known classes: {len(report.known_classes)}",
        f"primed classes: {', '.join(report.primed_classes)}",
        f"discovered classes: {report.discovered_classes}",
        f"stream samples: {len(report.timeline)}",
        f"confidence drops: {len(report.events)}",
        "",
        "class mapping:",
    ]
    lines += [f"  {label} -> {truth}" for label, truth in report.class_mapping.items()]
    lines += ["", "detection delay (samples):"]
    lines += [
        f"  {c}: {'not detected' if d is None else d}"
        for c, d in report.detection_delay.items()
    ]
    lines += ["", "confusion matrix (rows: true, columns: predicted):"]
    lines += ["  " + row for row in report.confusion.to_string().splitlines()]
    return "\n".join(lines) + "\n"


def write_report(report: Report, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv = {"index": False, "lineterminator": "\n", "float_format": FLOAT_FORMAT}

    (out_dir / "report.txt").write_text(render_report_text(report), encoding="utf-8")
    (out_dir / "report.json").write_text(
        json.dumps(report.summary(), indent=2) + "\n", encoding="utf-8"
    )
    report.confusion.to_csv(out_dir / "confusion.csv", lineterminator="\n")
    report.trace.to_csv(out_dir / "confidence_trace.csv", **csv)
    report.timeline.to_csv(out_dir / "discovery_timeline.csv", **csv)
    report.events.to_csv(out_dir / "events.csv", **csv)
    report.features.to_csv(out_dir / "features.csv", **csv)
    (out_dir / "rules.txt").write_text(render_rules_text(report.rules), encoding="utf-8")
    (out_dir / "rules.json").write_text(
        report.rules.model_dump_json(indent=2) + "\n", encoding="utf-8"
    )
    logger.info("Wrote report to %s", out_dir)
    return out_dir
