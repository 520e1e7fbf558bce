import pytest

from cloudclass.datasets import gen_synth
from cloudclass.errors import ScheduleError
from cloudclass.experiment import (
    Phase,
    StreamSchedule,
    default_schedule,
    learning_curve,
    run_experiment,
    write_learning_curve,
    write_report,
)

REPORT_FILES = [
    "report.txt",
    "report.json",
    "confusion.csv",
    "confidence_trace.csv",
    "discovery_timeline.csv",
    "events.csv",
    "features.csv",
    "rules.txt",
    "rules.json",
]


def _blobs(seed=7, dim=2, separation=8.0):
    dataset, _ = gen_synth(blobs=3, dim=dim, separation=separation, seed=seed)
    return dataset


def test_held_out_blob_is_discovered():
    dataset = _blobs()
    schedule = StreamSchedule(
        phases=[
            Phase(classes=["blob_0", "blob_1"], labeled_fraction=0.8),
            Phase(classes=["blob_2"]),
        ]
    )
    report = run_experiment(dataset, schedule, seed=7)

    assert report.discovered_classes >= 1
    assert report.detection_delay["blob_2"] is not None
    assert report.detection_delay["blob_2"] <= 20
    assert "blob_2" in report.class_mapping.values()
    assert report.accuracy >= 0.9


def test_all_classes_primed_means_no_new_classes():
    dataset = _blobs(seed=2)
    schedule = StreamSchedule(phases=[Phase(classes=dataset.classes, labeled_fraction=0.8)])
    report = run_experiment(dataset, schedule, seed=2)

    assert report.discovered_classes == 0
    assert report.new_class_events == 0
    assert sorted(report.known_classes) == sorted(dataset.classes)
    assert report.detection_delay == {}


def test_report_is_internally_consistent():
    dataset = _blobs(seed=4)
    report = run_experiment(dataset, default_schedule(dataset.classes, ["blob_0"]), seed=4)

    assert int(report.confusion.to_numpy().sum()) == report.evaluated
    assert report.evaluated == 90  # 30% of each 100-sample blob
    known = report.timeline["known_classes"].tolist()
    assert known == sorted(known)
    assert list(report.timeline["step"]) == list(range(1, len(known) + 1))
    assert len(report.rules.rules) == len(report.known_classes)


def test_single_class_priming_discovers_the_rest():
    passed = 0
    for seed in range(100):
        dataset = _blobs(seed=seed, dim=3, separation=12.0)
        schedule = default_schedule(dataset.classes, ["blob_0"], prime_fraction=0.8)
        report = run_experiment(dataset, schedule, seed=seed)
        if report.accuracy >= 0.9:
            passed += 1
    assert passed >= 95


def test_one_percent_labels_track_full_supervision():
    sparse = full = 0.0
    seeds = range(5)
    for seed in seeds:
        dataset, _ = gen_synth(blobs=3, dim=2, separation=8.0, samples_per_blob=500, seed=seed)
        curve = learning_curve(dataset, [0.01, 1.0], seed=seed)
        assert curve["labeled_samples"].tolist()[0] == 3 * 4  # round(0.01 * 350) per class
        sparse += curve["accuracy"].iloc[0]
        full += curve["accuracy"].iloc[1]
    assert sparse / len(seeds) >= full / len(seeds) - 0.05


def test_learning_curve_rows(tmp_path):
    dataset = _blobs(seed=3)
    curve = learning_curve(dataset, [0.05, 0.2, 1.0], seed=3)

    assert curve["labeled_fraction"].tolist() == [0.05, 0.2, 1.0]
    labeled = curve["labeled_samples"].tolist()
    assert labeled == sorted(labeled)
    assert labeled[-1] == 210  # every training sample of three 100-sample blobs
    assert curve["discovered_classes"].iloc[-1] == 0
    assert curve["accuracy"].between(0.0, 1.0).all()

    path = write_learning_curve(curve, tmp_path / "curve")
    assert path.name == "learning_curve.csv"
    assert path.read_text().splitlines()[1].startswith("0.05,")


def test_learning_curve_errors():
    dataset = _blobs()
    with pytest.raises(ScheduleError):
        learning_curve(dataset, [])
    unlabeled = gen_synth(blobs=2, seed=1)[0]
    unlabeled.labels = None
    with pytest.raises(ScheduleError):
        learning_curve(unlabeled, [0.5])


def test_reports_are_byte_identical(tmp_path):
    dataset = _blobs(seed=9)
    schedule = default_schedule(dataset.classes, ["blob_1"])
    first = write_report(run_experiment(dataset, schedule, seed=9), tmp_path / "one")
    second = write_report(run_experiment(dataset, schedule, seed=9), tmp_path / "two")

    for name in REPORT_FILES:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_report_files_written(tmp_path):
    dataset = _blobs()
    report = run_experiment(dataset, default_schedule(dataset.classes, ["blob_0"]))
    out = write_report(report, tmp_path / "report")

    for name in REPORT_FILES:
        assert (out / name).exists()
    assert "accuracy:" in (out / "report.txt").read_text()
    assert (out / "confidence_trace.csv").read_text().startswith(
        "step,seq,true_label,lam,mean_conf,threshold,density,decision"
    )


def test_phase_counts_limit_draws():
    dataset = _blobs()
    schedule = StreamSchedule(
        phases=[
            Phase(classes=["blob_0"], labeled_fraction=1.0, count=20),
            Phase(classes=["blob_1"], count=30),
        ]
    )
    report = run_experiment(dataset, schedule)
    assert len(report.timeline) == 30


def test_schedule_errors():
    dataset = _blobs()
    with pytest.raises(ScheduleError):
        run_experiment(dataset, StreamSchedule(phases=[Phase(classes=["nope"], labeled_fraction=1)]))
    with pytest.raises(ScheduleError):
        run_experiment(dataset, StreamSchedule(phases=[Phase(classes=["blob_0"])]))
    with pytest.raises(ScheduleError):
        run_experiment(
            dataset,
            StreamSchedule(phases=[Phase(classes=["blob_0"], labeled_fraction=1, count=500)]),
        )
    with pytest.raises(ScheduleError):
        run_experiment(dataset, default_schedule(dataset.classes, ["blob_0"]), test_fraction=1.0)


def test_phase_validation():
    with pytest.raises(ValueError):
        Phase(classes=["a"], labeled_fraction=1.5)
    with pytest.raises(ValueError):
        Phase(classes=["a"], count=0)
    with pytest.raises(ValueError):
        StreamSchedule(phases=[])
