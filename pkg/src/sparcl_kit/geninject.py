"""Generation-side transforms: padding-embedding injection and AdaIN.

Embedding-sequence file layout::

    {"version":1,"L":...,"d":...,"k":...,"dtype":"f32le"}\\n
    L*d little-endian float32, row-major
    8-byte little-endian FNV-1a 64 checksum of the float payload
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ChannelMismatch, ChecksumMismatch, CorruptHeader, DimMismatch
from .numkit import channel_stats

SEQ_VERSION = 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass
class EmbeddingSequence:
    rows: np.ndarray  # L x d
    eos_index: int  # 1-based position of the EOS embedding

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise DimMismatch(f"sequence rows must be L x d, got {self.rows.shape}")
        if not 1 <= self.eos_index <= self.length:
            raise DimMismatch(f"eos_index {self.eos_index} outside [1, {self.length}]")

    @property
    def length(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def inject_image_features(seq: EmbeddingSequence, image_embedding) -> EmbeddingSequence:
    """Keep rows up to and including EOS; every later (padding) row becomes the image embedding."""
    f = np.asarray(image_embedding, dtype=np.float64).reshape(-1)
    if f.shape[0] != seq.dim:
        raise DimMismatch(f"image embedding dim {f.shape[0]} != sequence dim {seq.dim}")
    rows = seq.rows.copy()
    rows[seq.eos_index :] = f
    return EmbeddingSequence(rows=rows, eos_index=seq.eos_index)


def adain(content, style, eps: float = 1e-5) -> np.ndarray:
    """Re-normalise each content channel to the style channel's mean and std."""
    content = np.asarray(content, dtype=np.float64)
    style = np.asarray(style, dtype=np.float64)
    if content.ndim != 3 or style.ndim != 3:
        raise ChannelMismatch("feature maps must be C x H x W")
    if content.shape[0] != style.shape[0]:
        raise ChannelMismatch(f"channel counts differ: {content.shape[0]} vs {style.shape[0]}")
    mu_c, sd_c = channel_stats(content, eps)
    mu_s, sd_s = channel_stats(style, eps)
    normed = (content - mu_c[:, None, None]) / sd_c[:, None, None]
    return mu_s[:, None, None] + sd_s[:, None, None] * normed


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def write_sequence(seq: EmbeddingSequence, path: str | os.PathLike) -> None:
    header = {"version": SEQ_VERSION, "L": seq.length, "d": seq.dim, "k": seq.eos_index, "dtype": "f32le"}
    payload = np.ascontiguousarray(seq.rows, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)
        fh.write(fnv1a64(payload).to_bytes(8, "little"))


def read_sequence(path: str | os.PathLike) -> EmbeddingSequence:
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise CorruptHeader(f"{path}: missing header line")
    try:
        header = json.loads(blob[:nl])
        L, d, k = int(header["L"]), int(header["d"]), int(header["k"])
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptHeader(f"{path}: unreadable header") from exc
    if header.get("version") != SEQ_VERSION or header.get("dtype") != "f32le":
        raise CorruptHeader(f"{path}: unsupported version/dtype")
    if L < 1 or d < 1 or not 1 <= k <= L:
        raise CorruptHeader(f"{path}: invalid dims L={L} d={d} k={k}")
    body = blob[nl + 1 :]
    if len(body) != 4 * L * d + 8:
        raise CorruptHeader(f"{path}: payload size {len(body)} does not match L={L}, d={d}")
    payload, tail = body[:-8], body[-8:]
    if fnv1a64(payload) != int.from_bytes(tail, "little"):
        raise ChecksumMismatch(f"{path}: checksum mismatch")
    rows = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(L, d)
    return EmbeddingSequence(rows=rows, eos_index=k)
