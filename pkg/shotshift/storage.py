from __future__ import with_statement

import json
import os

from collections import namedtuple
from tempfile import NamedTemporaryFile

import numpy as np

from shotshift.constants import CHECKPOINT_FORMAT
from shotshift.exceptions import CheckpointError, DataError

Checkpoint = namedtuple("Checkpoint", "params phase config supports embeddings")


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError("cannot serialize {!r}".format(obj))


def dumps(data):
    """
    Canonical JSON text: sorted keys, fixed indentation, trailing newline.
    """
    return json.dumps(data, sort_keys=True, indent=2, default=_default) + "\n"


def write_json(path, data):
    """
    Save data as JSON. We want to always have a valid file so it is written
    to a temporary file next to path and renamed over it.
    """
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        os.makedirs(directory)
    text = dumps(data)
    with NamedTemporaryFile("w", dir=directory, delete=False, suffix=".tmp") as f:
        f.write(text)
        f.flush()
        os.fsync(f.fileno())
        tmppath = f.name
    os.rename(tmppath, path)
    return path


def read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except IOError as e:
        raise DataError("cannot read {}: {}".format(path, e.strerror or e))
    except ValueError as e:
        raise DataError("{} is not valid JSON: {}".format(path, e))


def save_checkpoint(path, params, phase, config=None, fewshot=None, embeddings=None):
    """
    Write extractor parameters, the config echo and, after meta-testing,
    the frozen support identities and class embeddings.
    """
    data = {
        "format": CHECKPOINT_FORMAT,
        "phase": phase,
        "params": params.to_dict(),
        "config": config or {},
        "supports": fewshot.to_dict() if fewshot is not None else None,
        "embeddings": None,
    }
    if embeddings is not None:
        data["embeddings"] = {
            str(class_id): {
                "mean": ce.mean.tolist(),
                "std": ce.std.tolist(),
                "shots": ce.shots,
            }
            for class_id, ce in embeddings.items()
        }
    return write_json(path, data)


def load_checkpoint(path):
    from shotshift.embedding import ClassEmbedding, ExtractorParams

    try:
        data = read_json(path)
    except DataError as e:
        raise CheckpointError(str(e))
    if not isinstance(data, dict) or data.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(
            "{} is not a {} file".format(path, CHECKPOINT_FORMAT)
        )
    try:
        params = ExtractorParams.from_dict(data["params"])
        embeddings = None
        if data.get("embeddings") is not None:
            embeddings = {
                int(class_id): ClassEmbedding(
                    np.array(item["mean"], dtype=np.float64),
                    np.array(item["std"], dtype=np.float64),
                    int(item["shots"]),
                )
                for class_id, item in data["embeddings"].items()
            }
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError("checkpoint {} is damaged: {}".format(path, e))
    return Checkpoint(
        params,
        data.get("phase"),
        data.get("config") or {},
        data.get("supports"),
        embeddings,
    )
