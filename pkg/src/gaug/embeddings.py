"""Instance embedding store: extraction, binary persistence, validation.

File format (little-endian throughout):

    magic   8 bytes  b"GAUGEMB1"
    version u32      = 1
    N       u64
    d       u32
    labels? u8       0 or 1
    data    N*d f32  row-major
    labels  N*u32    only when the flag is 1
    crc     u32      CRC32 of every preceding byte (magic included)
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Instance
from .errors import StoreFormatError, ValidationError

MAGIC = b"GAUGEMB1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<IQIB")  # version, N, d, has_labels


@dataclass(frozen=True)
class EmbeddingStore:
    """N x d float32 matrix of instance embeddings, row i for instance id i."""

    embeddings: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        emb = self.embeddings
        if emb.ndim != 2 or emb.shape[0] < 1:
            raise ValidationError(f"embeddings must be N x d with N >= 1, got {emb.shape}")
        if emb.dtype != np.float32:
            raise ValidationError("embeddings must be float32")
        if not np.isfinite(emb).all():
            raise ValidationError("embeddings contain non-finite values")
        norms = np.linalg.norm(emb.astype(np.float64), axis=1)
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise ValidationError(f"zero-norm embedding at id {zero[0]}")
        if self.labels is not None and len(self.labels) != emb.shape[0]:
            raise ValidationError("label count does not match embedding count")

    @property
    def count(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


def extract_embeddings(dataset: list[Instance], extractor) -> EmbeddingStore:
    """Run ``extractor`` over every sample and assemble a store, row i = id i.

    Rejects non-finite or zero-norm embeddings (cosine similarity would be
    undefined) and inconsistent output dimensions, naming the offending id.
    """
    if not dataset:
        raise ValidationError("dataset is empty")
    ordered = sorted(dataset, key=lambda inst: inst.id)
    rows = []
    dim = None
    for inst in ordered:
        vec = np.asarray(extractor(inst.sample), dtype=np.float32).reshape(-1)
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise ValidationError(
                f"inconsistent embedding dim at id {inst.id}: {vec.size} != {dim}"
            )
        if not np.isfinite(vec).all():
            raise ValidationError(f"non-finite embedding at id {inst.id}")
        if not np.any(vec):
            raise ValidationError(f"zero-norm embedding at id {inst.id}")
        rows.append(vec)
    labels = None
    if ordered[0].label is not None:
        labels = np.array([inst.label for inst in ordered], dtype=np.int64)
    return EmbeddingStore(np.stack(rows), labels)


def persist_store(store: EmbeddingStore, path) -> None:
    emb = np.ascontiguousarray(store.embeddings, dtype="<f4")
    has_labels = store.labels is not None
    payload = MAGIC
    payload += _HEADER.pack(FORMAT_VERSION, store.count, store.dim, int(has_labels))
    payload += emb.tobytes()
    if has_labels:
        payload += np.ascontiguousarray(store.labels, dtype="<u4").tobytes()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(payload + struct.pack("<I", crc))


def load_store(path) -> EmbeddingStore:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC):
        raise StoreFormatError(StoreFormatError.TRUNCATED, f"file is {len(raw)} bytes")
    if raw[: len(MAGIC)] != MAGIC:
        raise StoreFormatError(StoreFormatError.BAD_MAGIC,
                               f"expected {MAGIC!r}, got {raw[:len(MAGIC)]!r}")
    off = len(MAGIC)
    if len(raw) < off + _HEADER.size:
        raise StoreFormatError(StoreFormatError.TRUNCATED, "header incomplete")
    version, n, d, has_labels = _HEADER.unpack_from(raw, off)
    if version != FORMAT_VERSION:
        raise StoreFormatError(StoreFormatError.VERSION_MISMATCH,
                               f"version {version}, expected {FORMAT_VERSION}")
    off += _HEADER.size
    need = n * d * 4 + (n * 4 if has_labels else 0)
    if len(raw) != off + need + 4:
        raise StoreFormatError(
            StoreFormatError.TRUNCATED,
            f"expected {off + need + 4} bytes for N={n} d={d}, got {len(raw)}",
        )
    (crc_stored,) = struct.unpack_from("<I", raw, len(raw) - 4)
    crc_actual = zlib.crc32(raw[:-4]) & 0xFFFFFFFF
    if crc_stored != crc_actual:
        raise StoreFormatError(StoreFormatError.CHECKSUM_FAILURE,
                               f"crc {crc_actual:#010x} != stored {crc_stored:#010x}")
    emb = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    labels = None
    if has_labels:
        labels = np.frombuffer(raw, dtype="<u4", count=n,
                               offset=off + n * d * 4).astype(np.int64)
    return EmbeddingStore(emb.astype(np.float32), labels)
