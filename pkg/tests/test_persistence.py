import numpy as np
import pytest

from cloudclass.classifier import XClassModel
from cloudclass.config import ClassifierConfig, NoveltyConfig
from cloudclass.datasets import gen_synth
from cloudclass.errors import ModelChecksumError, ModelFileError, ModelVersionError
from cloudclass.persistence import dumps_model, load_model, loads_model, save_model


def _streamed_model():
    dataset, _ = gen_synth(blobs=2, dim=2, separation=6.0, samples_per_blob=100, seed=5)
    model = XClassModel(
        ClassifierConfig(novelty=NoveltyConfig(m=2.5)), schema=dataset.schema
    )
    model.prime([(x, "blob_0") for x in dataset.rows[:80]], pool=dataset.rows)
    for x in dataset.rows[100:]:
        model.learn_stream(x)
    return dataset, model


def test_save_load_prediction_parity(tmp_path):
    dataset, model = _streamed_model()
    path = save_model(model, tmp_path / "models" / "model.cloud")
    restored = load_model(path)

    rng = np.random.default_rng(0)
    points = rng.normal(dataset.rows.mean(axis=0), dataset.rows.std(axis=0), size=(1000, 2))
    for x in points:
        a, b = model.predict(x), restored.predict(x)
        assert a.label == b.label
        assert a.lambdas == b.lambdas


def test_round_trip_keeps_state():
    _, model = _streamed_model()
    restored = loads_model(dumps_model(model))

    assert restored.labels == model.labels
    assert restored.config == model.config
    assert restored.tracker == model.tracker
    assert restored.tracker.m == 2.5
    assert restored.seq == model.seq
    assert restored.auto_label_count == model.auto_label_count
    assert len(restored.buffer) == len(model.buffer)
    assert dumps_model(restored) == dumps_model(model)


def test_header_line():
    _, model = _streamed_model()
    header = dumps_model(model).splitlines()[0]
    assert header.startswith("cloudclass-model v1 sha256=")


def test_truncated_file_fails_checksum(tmp_path):
    _, model = _streamed_model()
    path = save_model(model, tmp_path / "model.cloud")
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ModelChecksumError):
        load_model(path)


def test_edited_payload_fails_checksum():
    _, model = _streamed_model()
    text = dumps_model(model).replace('"seq": ', '"seq": 1', 1)
    with pytest.raises(ModelChecksumError):
        loads_model(text)


def test_old_version_is_rejected():
    _, model = _streamed_model()
    text = dumps_model(model).replace("cloudclass-model v1", "cloudclass-model v0", 1)
    with pytest.raises(ModelVersionError):
        loads_model(text)


def test_not_a_model_file(tmp_path):
    with pytest.raises(ModelFileError):
        loads_model("hello\n{}")
    with pytest.raises(ModelFileError):
        load_model(tmp_path / "missing.cloud")


def test_config_override_on_load():
    _, model = _streamed_model()
    restored = loads_model(
        dumps_model(model), ClassifierConfig(novelty=NoveltyConfig(m=4.0))
    )
    assert restored.tracker.m == 4.0
