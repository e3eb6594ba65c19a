import json
import os

import numpy as np
import pytest

from shotshift.constants import CHECKPOINT_FORMAT
from shotshift.embedding import ClassEmbedding, ExtractorParams
from shotshift.exceptions import CheckpointError, DataError
from shotshift.storage import (
    dumps,
    load_checkpoint,
    read_json,
    save_checkpoint,
    write_json,
)


def test_write_json(tmp_path):
    path = str(tmp_path / "nested" / "out.json")
    data = {"b": np.float64(0.5), "a": np.arange(3), "n": np.int64(4), "s": {3, 1}}
    assert write_json(path, data) == path
    assert read_json(path) == {"a": [0, 1, 2], "b": 0.5, "n": 4, "s": [1, 3]}
    assert os.listdir(str(tmp_path / "nested")) == ["out.json"]
    with open(path) as f:
        assert f.read() == dumps(data)
    assert dumps({"b": 1, "a": 2}).startswith('{\n  "a": 2')

    with pytest.raises(TypeError):
        dumps({"x": object()})


def test_read_json_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    for path in (bad, tmp_path / "missing.json"):
        print(path)
        with pytest.raises(DataError):
            read_json(str(path))


def test_checkpoint(tmp_path):
    path = str(tmp_path / "model.json")
    params = ExtractorParams.initialize(4, 2, np.random.default_rng(0))
    embeddings = {
        5: ClassEmbedding(np.array([0.1, 0.2, 0.3, 0.4]), np.zeros(4), 3),
        6: ClassEmbedding(np.array([-1.0, 0.0, 2.5, 1e-3]), np.full(4, 0.25), 3),
    }
    save_checkpoint(path, params, "meta_test", config={"seed": 1}, embeddings=embeddings)
    checkpoint = load_checkpoint(path)
    assert checkpoint.params == params
    assert checkpoint.phase == "meta_test"
    assert checkpoint.config == {"seed": 1}
    assert checkpoint.supports is None
    assert sorted(checkpoint.embeddings) == [5, 6]
    for class_id, ce in embeddings.items():
        restored = checkpoint.embeddings[class_id]
        assert np.array_equal(restored.mean, ce.mean)
        assert np.array_equal(restored.std, ce.std)
        assert restored.shots == 3

    save_checkpoint(path, params, "meta_train")
    checkpoint = load_checkpoint(path)
    assert checkpoint.embeddings is None
    assert checkpoint.config == {}


def test_damaged_checkpoints(tmp_path):
    path = tmp_path / "model.json"
    params = ExtractorParams.initialize(4, 2, np.random.default_rng(0)).to_dict()
    tests = [
        "not json",
        json.dumps([1, 2]),
        json.dumps({"format": "other/1", "params": params}),
        json.dumps({"format": CHECKPOINT_FORMAT}),
        json.dumps(
            {"format": CHECKPOINT_FORMAT, "params": params, "embeddings": {"5": {"mean": []}}}
        ),
    ]
    for text in tests:
        print(text[:40])
        path.write_text(text)
        with pytest.raises(CheckpointError):
            load_checkpoint(str(path))
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "missing.json"))
