import numpy as np
import pytest

from ktddl import model_io
from ktddl.exceptions import DimensionMismatchError, MalformedHeaderError
from ktddl.task_driven import ModelPair, TrainLogRecord
from ktddl.unsupervised import Dictionary


def _model(seed=0):
    rng = np.random.default_rng(seed)
    return ModelPair(Dictionary(rng.normal(size=(5, 4)), {"stage": "test"}), rng.normal(size=(3, 4)))


def test_model_round_trip_is_bit_identical(tmp_path):
    model = _model()
    model_io.save_model(tmp_path / "m.bin", model, {"note": 1})
    back, meta = model_io.load_model(tmp_path / "m.bin")
    assert back.dictionary.atoms.tobytes() == model.dictionary.atoms.tobytes()
    assert back.weights.tobytes() == model.weights.tobytes()
    assert meta["note"] == 1 and meta["fingerprint"] == model.dictionary.fingerprint
    assert back.dictionary.provenance == {"stage": "test"}


def test_dictionary_round_trip(tmp_path):
    d = _model().dictionary
    model_io.save_dictionary(tmp_path / "d.bin", d)
    assert np.array_equal(model_io.load_dictionary(tmp_path / "d.bin").atoms, d.atoms)


def test_tampered_model_is_rejected(tmp_path):
    path = tmp_path / "m.bin"
    model_io.save_model(path, _model())
    raw = bytearray(path.read_bytes())
    raw[20] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(DimensionMismatchError):
        model_io.load_model(path)


def test_truncated_and_bad_magic(tmp_path):
    path = tmp_path / "m.bin"
    model_io.save_model(path, _model())
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(DimensionMismatchError):
        model_io.load_model(path)
    path.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(MalformedHeaderError):
        model_io.load_model(path)


def test_train_log_round_trip(tmp_path):
    records = [TrainLogRecord(1, 0.1, 3, 0.25), TrainLogRecord(2, 0.05, 0, 1 / 3)]
    model_io.write_train_log(tmp_path / "log.csv", records)
    back = model_io.read_train_log(tmp_path / "log.csv")
    assert back == [{"t": 1, "step": 0.1, "active_count": 3, "sample_loss": 0.25},
                    {"t": 2, "step": 0.05, "active_count": 0, "sample_loss": 1 / 3}]
