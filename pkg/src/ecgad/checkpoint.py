"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic "ECGAD1" | sha256(config JSON) raw 32 bytes | u32 config length |
    config JSON (canonical) | u32 tensor count | per-tensor records

Per-tensor record: u16 name length | name utf-8 | u8 rank | rank x u32 dims |
float32 data. Weights are stored and trained in float32, so a save/load
round trip is bit-exact.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import StructureError
from .model import ModelConfig, RestorationModel

MAGIC = b"ECGAD1"


def save_checkpoint(path: str | Path, model: RestorationModel) -> None:
    config_json = model.config.to_json().encode("utf-8")
    chunks = [MAGIC, hashlib.sha256(config_json).digest(), struct.pack("<I", len(config_json)), config_json]
    state = model.state_dict()
    chunks.append(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        name_bytes = name.encode("utf-8")
        array = tensor.detach().cpu().numpy().astype("<f4")
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(array.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> RestorationModel:
    blob = Path(path).read_bytes()
    view = memoryview(blob)
    offset = 0

    def take(n: int) -> memoryview:
        nonlocal offset
        if offset + n > len(blob):
            raise StructureError(f"{path}: truncated checkpoint")
        chunk = view[offset : offset + n]
        offset += n
        return chunk

    if bytes(take(len(MAGIC))) != MAGIC:
        raise StructureError(f"{path}: bad magic, not a checkpoint")
    digest = bytes(take(32))
    (config_len,) = struct.unpack("<I", take(4))
    config_json = bytes(take(config_len))
    if hashlib.sha256(config_json).digest() != digest:
        raise StructureError(f"{path}: config digest mismatch")
    config = ModelConfig.from_json(config_json.decode("utf-8"))

    model = RestorationModel(config)
    expected = model.state_dict()
    (n_tensors,) = struct.unpack("<I", take(4))
    if n_tensors != len(expected):
        raise StructureError(f"{path}: {n_tensors} tensors, model expects {len(expected)}")
    loaded = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims)
        if name not in expected:
            raise StructureError(f"{path}: unexpected tensor {name!r}")
        if tuple(expected[name].shape) != dims:
            raise StructureError(
                f"{path}: tensor {name!r} has shape {dims}, expected {tuple(expected[name].shape)}"
            )
        loaded[name] = torch.from_numpy(data.copy())
    if offset != len(blob):
        raise StructureError(f"{path}: {len(blob) - offset} trailing bytes")
    model.load_state_dict(loaded)
    return model
