"""Binary checkpoint format.

Layout: ``b"CPCK"``, u32 version, u32 config-blob length, UTF-8 JSON blob,
then records ``(u32 name length, name, u32 rank, u32 dims[rank], f64 payload)``,
then an 8-byte trailer ``b"CEND"`` + u32 CRC32 of every byte before the trailer.
All integers and floats little-endian.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, TrainConfig, config_to_dict, model_config_from_dict, train_config_from_dict
from .errors import ConfigMismatch, CorruptCheckpoint

MAGIC = b"CPCK"
TRAILER = b"CEND"
VERSION = 1


@dataclass
class Checkpoint:
    model_cfg: ModelConfig
    train_cfg: TrainConfig | None
    step: int
    arrays: dict[str, np.ndarray]

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        p = prefix + "/"
        return {k[len(p):]: v for k, v in self.arrays.items() if k.startswith(p)}


def save_checkpoint(path: str | Path, params: dict[str, torch.Tensor],
                    moments: tuple[dict, dict] | None, model_cfg: ModelConfig, step: int,
                    train_cfg: TrainConfig | None = None) -> None:
    blob = json.dumps({
        "model": config_to_dict(model_cfg),
        "train": config_to_dict(train_cfg) if train_cfg is not None else None,
        "step": int(step),
    }, sort_keys=True).encode("utf-8")
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(blob))
    out += blob

    def record(name: str, arr):
        arr = arr.detach().cpu().numpy() if isinstance(arr, torch.Tensor) else np.asarray(arr)
        enc = name.encode("utf-8")
        out.extend(struct.pack("<I", len(enc)) + enc)
        out.extend(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.extend(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    for name in sorted(params):
        record("param/" + name, params[name])
    if moments is not None:
        m, v = moments
        for name in sorted(m):
            record("adam_m/" + name, m[name])
            record("adam_v/" + name, v[name])
    out += TRAILER + struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(bytes(out))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic or too short")
    if data[-8:-4] != TRAILER:
        raise CorruptCheckpoint(f"{path}: missing trailer (truncated?)")
    if zlib.crc32(data[:-8]) & 0xFFFFFFFF != struct.unpack("<I", data[-4:])[0]:
        raise CorruptCheckpoint(f"{path}: CRC mismatch")
    try:
        version, blen = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise CorruptCheckpoint(f"{path}: unsupported version {version}")
        pos = 12
        meta = json.loads(data[pos:pos + blen].decode("utf-8"))
        pos += blen
        end = len(data) - 8
        arrays: dict[str, np.ndarray] = {}
        while pos < end:
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * count > end:
                raise CorruptCheckpoint(f"{path}: record {name!r} overruns file")
            arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(dims).copy()
            pos += 8 * count
        model_cfg = model_config_from_dict(meta["model"])
        train_cfg = train_config_from_dict(meta["train"]) if meta["train"] else None
    except (struct.error, UnicodeDecodeError, KeyError, ValueError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from None
    if expected is not None and expected != model_cfg:
        raise ConfigMismatch(f"{path}: checkpoint model config {model_cfg} != requested {expected}")
    return Checkpoint(model_cfg, train_cfg, int(meta["step"]), arrays)


def load_model(path: str | Path, expected: ModelConfig | None = None):
    """Convenience: rebuild a CPCModel from a checkpoint."""
    from .model import CPCModel

    ck = load_checkpoint(path, expected)
    model = CPCModel(ck.model_cfg)
    assign_parameters(model, ck.group("param"))
    return model, ck


def assign_parameters(model, arrays: dict[str, np.ndarray]) -> None:
    params = dict(model.named_parameters())
    if set(params) != set(arrays):
        raise ConfigMismatch(f"parameter names differ: {sorted(set(params) ^ set(arrays))}")
    with torch.no_grad():
        for name, p in params.items():
            if tuple(p.shape) != arrays[name].shape:
                raise ConfigMismatch(f"{name}: shape {tuple(p.shape)} vs {arrays[name].shape}")
            p.copy_(torch.from_numpy(arrays[name]).to(p.dtype))
