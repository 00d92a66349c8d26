"""Single-file checkpoints.

Layout::

    b"PIMCKPT1"                         8 bytes magic
    manifest length                     uint64, little-endian
    manifest                            UTF-8 JSON
    parameter blocks                    float32 little-endian, C order, in the
                                        declaration order of
                                        ``Module.named_parameters``

The manifest lists ``params`` as ``[name, shape]`` pairs in that order, and
carries the resolved run configuration and seed.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ..diffcore import Module

MAGIC = b"PIMCKPT1"


def round_to_storage(model: Module) -> None:
    """Snap parameters to float32 values so the in-memory model equals its checkpoint."""
    for p in model.parameters():
        p.data[...] = p.data.astype("<f4")


def save_checkpoint(path: str | os.PathLike, model: Module, manifest: dict) -> Path:
    named = list(model.named_parameters())
    manifest = dict(manifest)
    manifest["params"] = [[name, list(p.shape)] for name, p in named]
    text = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(text)))
        fh.write(text)
        for _, p in named:
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return path


def read_checkpoint(path: str | os.PathLike) -> tuple[dict, list[np.ndarray]]:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint (bad magic {blob[:8]!r})")
    (length,) = struct.unpack("<Q", blob[8:16])
    manifest = json.loads(blob[16:16 + length].decode("utf-8"))
    offset = 16 + length
    arrays = []
    for name, shape in manifest["params"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(blob):
            raise ValueError(f"{path} is truncated inside parameter {name}")
        arrays.append(np.frombuffer(blob[offset:end], dtype="<f4").reshape(shape))
        offset = end
    if offset != len(blob):
        raise ValueError(f"{path} has {len(blob) - offset} trailing bytes")
    return manifest, arrays


def load_parameters(model: Module, manifest: dict, arrays: list[np.ndarray]) -> None:
    named = list(model.named_parameters())
    expected = [[name, list(p.shape)] for name, p in named]
    if expected != manifest["params"]:
        raise ValueError("checkpoint parameters do not match the model built from its config")
    for (_, p), arr in zip(named, arrays):
        p.data[...] = arr
