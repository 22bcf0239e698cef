"""Model and calibration serialization: deterministic bytes, hashes, round-trips."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from emgfes.calibration import CalibrationSet, Segment
from emgfes.gbdt import GbdtParams, train_gbdt
from emgfes.labels import Movement
from emgfes.lda import train_lda
from emgfes.persist import (
    MODEL_MAGIC,
    ModelFormatError,
    load_calibration,
    load_model,
    model_bytes,
    model_hash,
    model_kind,
    parse_model,
    save_calibration,
    save_model,
)
from emgfes.stream import N_CHANNELS

CLASSES = (Movement.REST, Movement.DORSIFLEXION, Movement.PLANTARFLEXION)


def blob_cal(rng: np.random.Generator, n_per_class: int = 60) -> CalibrationSet:
    feats, labels, segs = [], [], []
    for i, m in enumerate(CLASSES):
        mean = np.zeros(N_CHANNELS)
        mean[i] = 6.0
        feats.append(rng.normal(mean, 1.0, size=(n_per_class, N_CHANNELS)))
        labels.append(np.full(n_per_class, int(m), dtype=np.int64))
        segs.append(Segment(m, i * n_per_class, (i + 1) * n_per_class))
    return CalibrationSet(
        features=np.concatenate(feats),
        labels=np.concatenate(labels),
        classes=CLASSES,
        segments=tuple(segs),
    )


@pytest.fixture(scope="module")
def cal():
    return blob_cal(np.random.default_rng(21))


@pytest.fixture(scope="module")
def lda_model(cal):
    return train_lda(cal)


@pytest.fixture(scope="module")
def gbdt_model(cal):
    return train_gbdt(cal, GbdtParams(iterations=12, max_depth=3, learning_rate=0.2, n_bins=16))


def test_lda_round_trip(lda_model, cal):
    data = model_bytes(lda_model)
    clone = parse_model(data)
    assert model_bytes(clone) == data
    assert model_hash(clone) == model_hash(lda_model)
    probe = cal.features[::7]
    assert np.array_equal(clone.discriminants(probe), lda_model.discriminants(probe))
    assert clone.classes == lda_model.classes
    assert clone.shrinkage == lda_model.shrinkage


def test_gbdt_round_trip(gbdt_model, cal):
    data = model_bytes(gbdt_model)
    clone = parse_model(data)
    assert model_bytes(clone) == data
    assert clone.params == gbdt_model.params
    assert clone.train_losses == gbdt_model.train_losses
    assert len(clone.trees) == len(gbdt_model.trees)
    probe = cal.features[::5]
    assert np.array_equal(clone.raw_scores(probe), gbdt_model.raw_scores(probe))
    for vec in probe[:10]:
        assert clone.predict(vec).label == gbdt_model.predict(vec).label


def test_file_round_trip(tmp_path, lda_model, gbdt_model):
    for model, name in ((lda_model, "m.lda"), (gbdt_model, "m.gbdt")):
        path = tmp_path / name
        save_model(model, path)
        assert model_hash(load_model(path)) == model_hash(model)


def test_hash_is_content_addressed(lda_model, gbdt_model, cal):
    assert model_hash(lda_model) == model_hash(lda_model)
    assert model_hash(lda_model) != model_hash(gbdt_model)
    other = train_lda(blob_cal(np.random.default_rng(99)))
    assert model_hash(other) != model_hash(lda_model)


def test_model_kind(lda_model, gbdt_model):
    assert model_kind(lda_model) == "lda"
    assert model_kind(gbdt_model) == "gbdt"
    with pytest.raises(ModelFormatError):
        model_kind(object())


def test_calibration_round_trip(tmp_path, cal):
    path = tmp_path / "session.cal"  # exact path, no npz suffix appended
    save_calibration(cal, path)
    assert path.exists() and not (tmp_path / "session.cal.npz").exists()
    back = load_calibration(path)
    assert np.array_equal(back.features, cal.features)
    assert np.array_equal(back.labels, cal.labels)
    assert back.classes == cal.classes
    assert back.segments == cal.segments


def test_load_calibration_rejects_garbage(tmp_path):
    path = tmp_path / "junk"
    path.write_bytes(b"\x00" * 64)
    with pytest.raises(ModelFormatError, match="not a calibration file"):
        load_calibration(path)


def test_parse_rejects_bad_magic(lda_model):
    data = b"XXXX" + model_bytes(lda_model)[4:]
    with pytest.raises(ModelFormatError, match="magic"):
        parse_model(data)


def test_parse_rejects_bad_version(lda_model):
    data = bytearray(model_bytes(lda_model))
    data[4:8] = struct.pack("<I", 9)
    with pytest.raises(ModelFormatError, match="version"):
        parse_model(bytes(data))


def test_parse_rejects_unknown_kind(lda_model):
    data = bytearray(model_bytes(lda_model))
    assert data[:4] == MODEL_MAGIC
    data[8] = 7  # kind byte follows the 4-byte magic and 4-byte version
    with pytest.raises(ModelFormatError, match="unknown model kind 7"):
        parse_model(bytes(data))


def test_parse_rejects_truncation(lda_model):
    data = model_bytes(lda_model)
    with pytest.raises(ModelFormatError, match="truncated"):
        parse_model(data[:-10])


def test_parse_rejects_garbage_manifest():
    blob = b"{broken"
    data = MODEL_MAGIC + struct.pack("<IBI", 1, 1, len(blob)) + blob
    with pytest.raises(ModelFormatError, match="manifest"):
        parse_model(data)
