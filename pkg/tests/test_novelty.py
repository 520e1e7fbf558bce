import numpy as np
import pytest

from cloudclass.clouds import R_STAR_SQ, add_cloud, init_class
from cloudclass.config import NoveltyConfig
from cloudclass.errors import DuplicateLabelError, UnknownClassError, UntrainedModelError
from cloudclass.novelty import (
    ConfidenceTracker,
    Decision,
    OutlierBuffer,
    buffer_outlier,
    check_novelty,
    class_confidence,
    confidence,
    rename_class,
    try_form_new_classes,
    update_tracker,
)


def _labels():
    counter = iter(range(1, 100))
    return lambda: f"new class {next(counter)}"


def test_tracker_matches_batch_statistics():
    rng = np.random.default_rng(1)
    lams = 1.0 - rng.random(10_000)  # (0, 1]
    tracker = ConfidenceTracker()
    for lam in lams:
        update_tracker(tracker, lam)

    assert tracker.i == 10_000
    assert tracker.mean_conf == pytest.approx(lams.mean(), abs=1e-9)
    assert tracker.var_conf == pytest.approx(lams.var(), abs=1e-9)


def test_tracker_rejects_out_of_range_confidence():
    with pytest.raises(ValueError):
        update_tracker(ConfidenceTracker(), 0.0)
    with pytest.raises(ValueError):
        update_tracker(ConfidenceTracker(), 1.5)


def test_check_novelty_m_sigma_rule():
    tracker = ConfidenceTracker(m=3.0)
    for lam in [0.8, 0.6, 0.8, 0.6]:
        update_tracker(tracker, lam)
    assert tracker.mean_conf == pytest.approx(0.7)
    assert tracker.sigma == pytest.approx(0.1)
    assert tracker.threshold == pytest.approx(0.4)
    assert check_novelty(tracker, 0.41) == Decision.ABSORB
    assert check_novelty(tracker, 0.39) == Decision.DROP_DETECTED


def test_check_novelty_needs_two_confidences():
    tracker = update_tracker(ConfidenceTracker(), 0.9)
    with pytest.raises(ValueError):
        check_novelty(tracker, 0.1)


def test_class_confidence_exact_hit_and_scale():
    model = init_class(np.array([0.2, 0.2]), 0, "a")
    lam, cloud = class_confidence(model, np.array([0.2, 0.2]))
    assert (lam, cloud) == (1.0, 0)

    lam, _ = class_confidence(model, np.array([0.2, 0.2 + np.sqrt(R_STAR_SQ)]))
    assert lam == pytest.approx(0.5)


def test_class_confidence_respects_feature_mask():
    model = init_class(np.array([0.2, 0.2]), 0, "a")
    model.feature_mask = np.array([True, False])
    lam, _ = class_confidence(model, np.array([0.2, 0.9]))
    assert lam == 1.0


def test_confidence_picks_best_class_and_cloud():
    a = init_class(np.array([0.1, 0.1]), 0, "a")
    add_cloud(a, np.array([0.9, 0.1]))
    b = init_class(np.array([0.5, 0.9]), 1, "b")

    best = confidence([b, a], np.array([0.85, 0.1]))
    assert best.class_index == 0
    assert best.cloud_index == 1

    best = confidence([a, b], np.array([0.5, 0.8]))
    assert best.class_index == 1


def test_confidence_tie_goes_to_lower_class_id():
    a = init_class(np.array([0.0, 0.0]), 0, "a")
    b = init_class(np.array([1.0, 1.0]), 1, "b")
    assert confidence([b, a], np.array([0.5, 0.5])).class_index == 0


def test_confidence_without_classes():
    with pytest.raises(UntrainedModelError):
        confidence([], np.zeros(2))


def test_buffer_evicts_oldest():
    cfg = NoveltyConfig(buffer_expiry=3)
    buf = OutlierBuffer()
    for seq in range(5):
        buffer_outlier(buf, np.full(2, seq / 10), 0.2, seq, cfg)
    assert [e.seq for e in buf.entries] == [2, 3, 4]
    assert buf.evicted == 2


def test_no_class_below_min_support():
    cfg = NoveltyConfig(kappa_min_support=10)
    buf = OutlierBuffer()
    rng = np.random.default_rng(0)
    for seq in range(9):
        buffer_outlier(buf, 0.8 + 0.01 * rng.normal(size=2), 0.1, seq, cfg)
    assert try_form_new_classes(buf, cfg, 3, _labels()) == []
    assert len(buf) == 9


def test_co_located_outliers_form_a_class():
    cfg = NoveltyConfig(kappa_min_support=10)
    buf = OutlierBuffer()
    rng = np.random.default_rng(0)
    for seq in range(10):
        buffer_outlier(buf, 0.8 + 0.01 * rng.normal(size=2), 0.1, seq, cfg)
    buffer_outlier(buf, np.array([0.05, 0.05]), 0.1, 10, cfg)

    founded = try_form_new_classes(buf, cfg, 3, _labels())
    assert len(founded) == 1
    new = founded[0]
    assert new.model.label == "new class 1"
    assert new.model.class_id == 3
    assert sorted(new.seqs) == list(range(10))
    assert sum(c.support for c in new.model.clouds) == 10
    # the far sample stays buffered
    assert [e.seq for e in buf.entries] == [10]


def test_two_groups_form_two_classes_with_sequential_labels():
    cfg = NoveltyConfig(kappa_min_support=10)
    buf = OutlierBuffer()
    rng = np.random.default_rng(1)
    for seq in range(20):
        center = 0.1 if seq % 2 == 0 else 0.9
        buffer_outlier(buf, center + 0.01 * rng.normal(size=2), 0.1, seq, cfg)

    founded = try_form_new_classes(buf, cfg, 2, _labels())
    assert [f.model.label for f in founded] == ["new class 1", "new class 2"]
    assert [f.model.class_id for f in founded] == [2, 3]
    assert len(buf) == 0


def test_released_group_leaves_the_buffer_without_a_class():
    cfg = NoveltyConfig(kappa_min_support=10)
    buf = OutlierBuffer()
    rng = np.random.default_rng(1)
    for seq in range(20):
        center = 0.1 if seq % 2 == 0 else 0.9
        buffer_outlier(buf, center + 0.01 * rng.normal(size=2), 0.1, seq, cfg)

    offered = []

    def release(prototype, entries):
        offered.append((prototype.copy(), [e.seq for e in entries]))
        return bool(prototype[0] < 0.5)

    founded = try_form_new_classes(buf, cfg, 2, _labels(), release=release)
    assert len(offered) == 2
    assert np.allclose(offered[0][0], [0.1, 0.1], atol=0.02)
    assert offered[0][1] == list(range(0, 20, 2))
    assert [f.model.label for f in founded] == ["new class 1"]
    assert founded[0].model.class_id == 2
    assert sorted(founded[0].seqs) == list(range(1, 20, 2))
    assert len(buf) == 0


def test_nearby_candidate_joins_class_founded_in_same_pass():
    cfg = NoveltyConfig(kappa_min_support=10)
    buf = OutlierBuffer()
    for seq in range(10):
        buffer_outlier(buf, np.zeros(2), 0.1, seq, cfg)
    # opens a second scratch cloud that then drifts back within r* of the first
    buffer_outlier(buf, np.array([0.6, 0.0]), 0.1, 10, cfg)
    for seq in range(11, 20):
        buffer_outlier(buf, np.array([0.31, 0.0]), 0.1, seq, cfg)

    founded = try_form_new_classes(buf, cfg, 2, _labels())
    assert len(founded) == 1
    assert sorted(founded[0].seqs) == list(range(20))
    assert founded[0].model.sample_count == 20
    assert len(buf) == 0


def test_rename_class_preserves_order():
    classes = {
        "a": init_class(np.zeros(2), 0, "a"),
        "new class 1": init_class(np.ones(2), 1, "new class 1"),
        "c": init_class(np.full(2, 0.5), 2, "c"),
    }
    renamed = rename_class(classes, "new class 1", "trucks")
    assert list(renamed) == ["a", "trucks", "c"]
    assert renamed["trucks"].label == "trucks"
    assert renamed["trucks"].class_id == 1


def test_rename_class_errors():
    classes = {"a": init_class(np.zeros(2), 0, "a"), "b": init_class(np.ones(2), 1, "b")}
    with pytest.raises(UnknownClassError):
        rename_class(classes, "zzz", "c")
    with pytest.raises(DuplicateLabelError):
        rename_class(classes, "a", "b")
