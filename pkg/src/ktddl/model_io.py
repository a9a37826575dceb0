"""Binary containers for dictionaries and trained models.

A matrix block is ``b"KJDL"``, version u32, rows u32, cols u32, followed by
row-major little-endian float64 values. A dictionary file holds one block
``(n, d)``; a model file holds the dictionary block followed by the ``(C, d)``
classifier block. Each file has a JSON sidecar (``<file>.json``) with the
fingerprint and provenance.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import DimensionMismatchError, MalformedHeaderError
from .kernels import fingerprint
from .task_driven import ModelPair
from .unsupervised import Dictionary

MAGIC = b"KJDL"
VERSION = 1
_HEADER = struct.Struct("<III")


def _pack_block(M) -> bytes:
    M = np.ascontiguousarray(M, dtype="<f8")
    rows, cols = M.shape
    return MAGIC + _HEADER.pack(VERSION, rows, cols) + M.tobytes()


def _unpack_block(raw: bytes, offset: int, path):
    if raw[offset:offset + 4] != MAGIC or len(raw) < offset + 16:
        raise MalformedHeaderError(f"{path}: bad block header at byte {offset}")
    version, rows, cols = _HEADER.unpack_from(raw, offset + 4)
    if version != VERSION:
        raise MalformedHeaderError(f"{path}: unsupported version {version}")
    start = offset + 16
    end = start + rows * cols * 8
    if len(raw) < end:
        raise DimensionMismatchError(f"{path}: block {rows}x{cols} truncated")
    values = np.frombuffer(raw[start:end], dtype="<f8").astype(float).reshape(rows, cols)
    return values, end


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_dictionary(path, dictionary: Dictionary, metadata=None):
    Path(path).write_bytes(_pack_block(dictionary.atoms))
    meta = {"fingerprint": dictionary.fingerprint, "provenance": dictionary.provenance}
    meta.update(metadata or {})
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_dictionary(path) -> Dictionary:
    raw = Path(path).read_bytes()
    atoms, end = _unpack_block(raw, 0, path)
    if end != len(raw):
        raise DimensionMismatchError(f"{path}: trailing bytes after dictionary block")
    meta = _read_sidecar(path)
    return Dictionary(atoms, meta.get("provenance", {}))


def save_model(path, model: ModelPair, metadata=None):
    Path(path).write_bytes(_pack_block(model.dictionary.atoms) + _pack_block(model.weights))
    meta = {
        "fingerprint": model.dictionary.fingerprint,
        "weights_fingerprint": fingerprint(model.weights),
        "provenance": model.dictionary.provenance,
    }
    meta.update(metadata or {})
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_model(path) -> tuple[ModelPair, dict]:
    """Return the model and its sidecar metadata."""
    raw = Path(path).read_bytes()
    atoms, end = _unpack_block(raw, 0, path)
    weights, end = _unpack_block(raw, end, path)
    if end != len(raw):
        raise DimensionMismatchError(f"{path}: trailing bytes after weight block")
    meta = _read_sidecar(path)
    model = ModelPair(Dictionary(atoms, meta.get("provenance", {})), weights)
    if "fingerprint" in meta and meta["fingerprint"] != model.dictionary.fingerprint:
        raise DimensionMismatchError(f"{path}: dictionary fingerprint does not match sidecar")
    return model, meta


def _read_sidecar(path) -> dict:
    side = sidecar_path(path)
    return json.loads(side.read_text()) if side.exists() else {}


def write_train_log(path, records):
    """CSV with columns ``t,step,active_count,sample_loss``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "step", "active_count", "sample_loss"])
        for r in records:
            writer.writerow([r.t, repr(float(r.step)), r.active_count, repr(float(r.sample_loss))])


def read_train_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"t": int(r["t"]), "step": float(r["step"]), "active_count": int(r["active_count"]),
                 "sample_loss": float(r["sample_loss"])} for r in csv.DictReader(fh)]
