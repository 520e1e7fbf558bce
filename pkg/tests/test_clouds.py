import numpy as np
import pytest

from cloudclass.clouds import (
    R_STAR,
    R_STAR_SQ,
    RADIUS_FLOOR,
    ClassModel,
    DataCloud,
    absorb,
    add_cloud,
    grow_class,
    init_class,
    nearest_cloud,
    outside_influence,
    radius_recursion,
    should_create_cloud,
    update_class_stats,
    update_cloud,
)
from cloudclass.errors import UntrainedModelError


def test_r_star_constant():
    assert R_STAR == pytest.approx(0.5176, abs=1e-4)
    assert R_STAR**2 == pytest.approx(R_STAR_SQ)


def test_init_class():
    model = init_class(np.array([0.2, 0.8]), class_id=0, label="cars")
    assert model.P == 1
    assert model.clouds[0].support == 1
    assert model.clouds[0].radius_sq == R_STAR_SQ
    assert model.sample_count == 1
    np.testing.assert_array_equal(model.class_mean, [0.2, 0.8])
    assert model.class_mean_sq_norm == pytest.approx(0.68)


def test_prototypes_are_member_means():
    rng = np.random.default_rng(11)
    for _ in range(100):
        dim = int(rng.integers(1, 5))
        # a few well separated modes so several clouds appear
        modes = rng.random((int(rng.integers(1, 4)), dim))
        samples = [
            np.clip(modes[rng.integers(len(modes))] + 0.05 * rng.normal(size=dim), 0, 1)
            for _ in range(int(rng.integers(2, 60)))
        ]
        model, assignment = grow_class(samples, class_id=0)

        assert len(assignment) == len(samples)
        for index, cloud in enumerate(model.clouds):
            members = [s for s, a in zip(samples, assignment) if a == index]
            assert cloud.support == len(members)
            np.testing.assert_allclose(cloud.prototype, np.mean(members, axis=0), atol=1e-9)
            spread = np.mean(np.sum((np.array(members) - cloud.prototype) ** 2, axis=1))
            assert cloud.scatter == pytest.approx(spread, abs=1e-9)


def _brute_force_create(model: ClassModel, x: np.ndarray) -> bool:
    def density(v):
        spread = model.class_mean_sq_norm - float(model.class_mean @ model.class_mean)
        return 1.0 / (1.0 + float((v - model.class_mean) @ (v - model.class_mean)) + max(spread, 0.0))

    d_x = density(x)
    d_p = [density(c.prototype) for c in model.clouds]
    return d_x >= max(d_p) or d_x <= min(d_p)


def test_should_create_cloud_agrees_with_brute_force():
    rng = np.random.default_rng(13)
    for _ in range(1000):
        dim = int(rng.integers(1, 6))
        model = ClassModel(class_id=0, label="c", dim=dim)
        for _ in range(int(rng.integers(1, 6))):
            add_cloud(model, rng.random(dim))
        for _ in range(int(rng.integers(1, 20))):
            update_class_stats(model, rng.random(dim))
        x = rng.random(dim)
        assert should_create_cloud(model, x) == _brute_force_create(model, x)


def test_should_create_cloud_never_for_existing_prototype():
    model = init_class(np.array([0.1, 0.1]), 0)
    add_cloud(model, np.array([0.9, 0.9]))
    assert not should_create_cloud(model, np.array([0.9, 0.9]))


def test_density_tie_with_lone_prototype_still_creates():
    model = init_class(np.array([0.0, 0.0]), 0)
    update_class_stats(model, np.array([2.0, 0.0]))
    # same distance to the class mean as the lone prototype
    assert should_create_cloud(model, np.array([2.0, 0.0]))
    assert not should_create_cloud(model, np.array([0.0, 0.0]))


def test_interleaved_far_modes_keep_their_own_clouds():
    rng = np.random.default_rng(1)
    samples = [
        np.full(2, 0.1 if k % 2 == 0 else 0.9) + 0.01 * rng.normal(size=2) for k in range(20)
    ]
    model, assignment = grow_class(samples, class_id=0)
    assert model.P == 2
    assert [c.support for c in model.clouds] == [10, 10]
    assert assignment == [k % 2 for k in range(20)]
    np.testing.assert_allclose(model.clouds[0].prototype, [0.1, 0.1], atol=0.02)


def test_outside_influence():
    model = init_class(np.array([0.0, 0.0]), 0)
    assert not outside_influence(model, np.array([0.3, 0.3]))
    assert outside_influence(model, np.array([0.6, 0.0]))


def test_nearest_cloud_prefers_lowest_index_on_ties():
    model = init_class(np.array([0.0, 0.0]), 0)
    add_cloud(model, np.array([1.0, 1.0]))
    assert nearest_cloud(model, np.array([0.5, 0.5])) == 0
    assert nearest_cloud(model, np.array([0.9, 0.8])) == 1


def test_empty_class_is_untrained():
    model = ClassModel(class_id=0, label="empty", dim=2)
    with pytest.raises(UntrainedModelError):
        nearest_cloud(model, np.zeros(2))


def test_update_cloud_running_mean_and_radius():
    model = init_class(np.array([0.0, 0.0]), 0)
    update_cloud(model, 0, np.array([0.4, 0.2]))

    cloud = model.clouds[0]
    assert cloud.support == 2
    np.testing.assert_allclose(cloud.prototype, [0.2, 0.1])
    assert cloud.radius_sq == pytest.approx((R_STAR_SQ + 1.0 - 0.05) / 2)


def test_radius_floor():
    assert radius_recursion(0.1, 1.5) < 0
    model = ClassModel(
        class_id=0,
        label="c",
        dim=2,
        clouds=[DataCloud(cloud_id=0, prototype=np.array([1.0, 1.0]), radius_sq=0.1)],
    )
    update_cloud(model, 0, np.array([1.0, 1.0]))
    assert model.clouds[0].radius_sq == RADIUS_FLOOR


def test_tight_samples_stay_in_one_cloud():
    rng = np.random.default_rng(2)
    samples = [np.array([0.5, 0.5]) + 0.01 * rng.normal(size=2) for _ in range(12)]
    model, assignment = grow_class(samples, class_id=0)
    assert model.P == 1
    assert set(assignment) == {0}


def test_separated_modes_form_separate_clouds():
    modes = [np.array([0.05, 0.05]), np.array([0.95, 0.05]), np.array([0.5, 0.95])]
    rng = np.random.default_rng(4)
    samples = [modes[k % 3] + 0.01 * rng.normal(size=2) for k in range(30)]
    model, _ = grow_class(samples, class_id=0)
    assert model.P == 3
    assert sorted(c.support for c in model.clouds) == [10, 10, 10]


def test_absorb_identical_sample_updates():
    model = init_class(np.array([0.3, 0.3]), 0)
    kind, index = absorb(model, np.array([0.3, 0.3]))
    assert (kind, index) == ("updated", 0)
    assert model.clouds[0].support == 2
    assert model.sample_count == 2


def test_grow_class_needs_samples():
    with pytest.raises(ValueError):
        grow_class([], class_id=0)
