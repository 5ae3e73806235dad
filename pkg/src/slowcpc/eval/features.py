"""Per-utterance feature files and frozen-model feature extraction.

File layout: ``b"CPCF"``, u32 version, u32 L, u32 d, L*d little-endian f32
(row-major), u32 CRC32 of every preceding byte.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np
import torch

from ..audio_io import Dataset
from ..checkpoint import load_model
from ..errors import CorruptFeatureFile

MAGIC = b"CPCF"
VERSION = 1
SUFFIX = ".cpcf"


def write_features(path: str | Path, feats: np.ndarray) -> None:
    feats = np.ascontiguousarray(feats, dtype="<f4")
    if feats.ndim != 2:
        raise ValueError("features must be an L x d matrix")
    body = MAGIC + struct.pack("<III", VERSION, *feats.shape) + feats.tobytes()
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def read_features(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != MAGIC:
        raise CorruptFeatureFile(f"{path}: bad magic")
    version, rows, cols = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise CorruptFeatureFile(f"{path}: unsupported version {version}")
    if len(data) != 16 + 4 * rows * cols + 4:
        raise CorruptFeatureFile(f"{path}: size does not match {rows}x{cols}")
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != struct.unpack("<I", data[-4:])[0]:
        raise CorruptFeatureFile(f"{path}: CRC mismatch")
    return np.frombuffer(data, dtype="<f4", count=rows * cols, offset=16).reshape(rows, cols).copy()


def read_feature_dir(directory: str | Path) -> dict[str, np.ndarray]:
    return {p.name[: -len(SUFFIX)]: read_features(p)
            for p in sorted(Path(directory).glob("*" + SUFFIX))}


@torch.no_grad()
def compute_features(model, samples: np.ndarray, level: str = "z") -> np.ndarray:
    """Features of one whole utterance; trailing samples past a multiple of 160 are dropped."""
    if level not in ("z", "c"):
        raise ValueError("level must be 'z' or 'c'")
    usable = (len(samples) // 160) * 160
    if usable == 0:
        raise ValueError("utterance shorter than one frame (160 samples)")
    x = torch.from_numpy(np.asarray(samples[:usable], dtype=np.float32))[None]
    z = model.encode(x)
    out = z if level == "z" else model.contextualize(z)
    return out[0].numpy()


def extract_features(checkpoint: str | Path, dataset: Dataset, level: str,
                     out_dir: str | Path) -> Path:
    """Write one ``<utt-id>.cpcf`` per utterance from a frozen checkpoint."""
    model, _ = load_model(checkpoint)
    model.eval()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, utt in enumerate(dataset.utterances):
        write_features(out / (utt.id + SUFFIX), compute_features(model, dataset.samples(i), level))
    return out
