"""Versioned binary checkpoint container.

Layout: one ASCII magic line, one JSON header line (format version, encoder
configuration, tensor names with shapes), then raw little-endian float64
tensor bytes concatenated in header order. Loading a saved model is
bit-identical to the original.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, EncoderModel, parameter_shapes
from .fileio import atomic_write_bytes

MAGIC = b"TRISCORE-CKPT\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """The file is not a readable checkpoint of a supported version."""


def _serialize(model: EncoderModel) -> bytes:
    names = list(model.params)
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "tensors": [[name, list(model.params[name].shape)] for name in names],
        "dtype": "<f8",
    }
    blob = bytearray()
    blob += MAGIC
    blob += (json.dumps(header, sort_keys=True) + "\n").encode("utf-8")
    for name in names:
        blob += np.ascontiguousarray(model.params[name], dtype="<f8").tobytes()
    return bytes(blob)


def checkpoint_save(model: EncoderModel, path: str | Path) -> None:
    atomic_write_bytes(path, _serialize(model))


def checkpoint_load(path: str | Path) -> EncoderModel:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic header, not a checkpoint file")
    body = data[len(MAGIC):]
    sep = body.find(b"\n")
    if sep < 0:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(body[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {header.get('format_version')!r}, expected {FORMAT_VERSION}"
        )
    config = EncoderConfig.from_dict(header["config"])
    expected = parameter_shapes(config)
    listed = {name: tuple(shape) for name, shape in header["tensors"]}
    if listed != expected:
        raise CheckpointError(f"{path}: tensor list does not match the stored configuration")

    raw = body[sep + 1:]
    params: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated tensor data at {name!r}")
        params[name] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes after tensor data")
    return EncoderModel(config=config, params=params)


def model_digest(model: EncoderModel) -> str:
    """SHA-256 of the serialized model; equal digests mean bit-identical parameters."""
    return hashlib.sha256(_serialize(model)).hexdigest()
