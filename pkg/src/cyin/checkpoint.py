"""Versioned binary checkpoint container for model parameters.

Layout (little-endian): magic "CYCK" | version u16 | config hash (64 ascii
bytes, sha256 hex) | ablation tag (u16 length + utf-8) | tensor count u32,
then per tensor: name (u16 length + utf-8) | ndim u8 | dims u32 each |
row-major f32 data. Loading verifies the magic, version, and config hash.
"""

from __future__ import annotations

import struct

import numpy as np
import torch

from cyin.config import ExperimentConfig
from cyin.model import CyINModel

MAGIC = b"CYCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    pass


def save_checkpoint(model: CyINModel, config: ExperimentConfig, path: str) -> None:
    state = model.state_dict()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(config.config_hash().encode("ascii"))
        tag = model.ablation.encode()
        fh.write(struct.pack("<H", len(tag)))
        fh.write(tag)
        fh.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            tensor = state[name].detach().cpu().to(torch.float32).numpy()
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", tensor.ndim))
            for d in tensor.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def _read(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path: str, config: ExperimentConfig) -> CyINModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic: expected {MAGIC!r}, got {magic!r}")
        (version,) = struct.unpack("<H", _read(fh, 2, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        stored_hash = _read(fh, 64, "config hash").decode("ascii")
        if stored_hash != config.config_hash():
            raise IncompatibleCheckpointError(
                f"config hash mismatch: checkpoint {stored_hash[:12]}..., config {config.config_hash()[:12]}..."
            )
        (tag_len,) = struct.unpack("<H", _read(fh, 2, "ablation tag"))
        ablation = _read(fh, tag_len, "ablation tag").decode()
        (count,) = struct.unpack("<I", _read(fh, 4, "tensor count"))
        state = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read(fh, 2, "tensor name"))
            name = _read(fh, name_len, "tensor name").decode()
            (ndim,) = struct.unpack("<B", _read(fh, 1, "tensor rank"))
            shape = tuple(
                struct.unpack("<I", _read(fh, 4, "tensor dim"))[0] for _ in range(ndim)
            )
            nbytes = 4 * int(np.prod(shape)) if shape else 4
            raw = _read(fh, nbytes, f"tensor data of {name}")
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
            state[name] = torch.from_numpy(arr)
    model = CyINModel(config, ablation=ablation)
    model.load_state_dict(state)
    return model
