"""Binary tensor files and aligned caption/embedding tables.

The on-disk tensor layout (documented in docs/format.md):

    bytes 0..7    magic  b"TAGTENS1"
    byte  8       dtype code, 0 = 32-bit float little-endian
    byte  9       ndim, one of 1, 2, 3
    next  8*ndim  dims, unsigned 64-bit little-endian, each >= 1
    rest          payload, product(dims) row-major float32 values

Loading then saving reproduces identical bytes; endianness is fixed
little-endian regardless of host.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentError, FormatError

MAGIC = b"TAGTENS1"
DTYPE_F32 = 0

_MAX_DIM = 1 << 48  # guards against corrupt headers before allocating


def save_tensor(values, path) -> None:
    """Write a dense float32 tensor in the TAGTENS1 layout."""
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim not in (1, 2, 3):
        raise FormatError(f"ndim: must be 1, 2, or 3, got {arr.ndim}")
    if any(d < 1 for d in arr.shape):
        raise FormatError(f"dims: all dims must be >= 1, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", DTYPE_F32, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def load_tensor(path) -> np.ndarray:
    """Read a TAGTENS1 tensor; returns a float32 array with the stored dims."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < len(MAGIC):
        raise FormatError(f"magic: file too short ({len(data)} bytes): {path}")
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"magic: expected {MAGIC!r}, got {data[:8]!r}: {path}")
    if len(data) < len(MAGIC) + 2:
        raise FormatError(f"dtype: truncated header: {path}")
    dtype_code, ndim = struct.unpack_from("<BB", data, len(MAGIC))
    if dtype_code != DTYPE_F32:
        raise FormatError(f"dtype: unsupported code {dtype_code}: {path}")
    if ndim not in (1, 2, 3):
        raise FormatError(f"ndim: must be 1, 2, or 3, got {ndim}: {path}")
    offset = len(MAGIC) + 2
    if len(data) < offset + 8 * ndim:
        raise FormatError(f"dims: truncated header: {path}")
    dims = struct.unpack_from(f"<{ndim}Q", data, offset)
    if any(d < 1 for d in dims):
        raise FormatError(f"dims: all dims must be >= 1, got {dims}: {path}")
    if any(d > _MAX_DIM for d in dims):
        raise FormatError(f"dims: overflow, got {dims}: {path}")
    offset += 8 * ndim
    count = int(np.prod(dims, dtype=object))
    expected = count * 4
    actual = len(data) - offset
    if actual != expected:
        raise FormatError(
            f"payload: expected {expected} bytes for dims {dims}, got {actual}: {path}"
        )
    arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
    return arr.reshape(dims).copy()


@dataclass(frozen=True)
class TextRecord:
    id: int
    text: str
    source: str


@dataclass
class AlignedTextTable:
    """Caption records aligned with an embedding matrix, row i <-> record i."""

    records: list[TextRecord]
    embeddings: np.ndarray  # N x D float32

    def __len__(self) -> int:
        return len(self.records)

    @property
    def dim(self) -> int:
        return 0 if self.embeddings.size == 0 else self.embeddings.shape[1]

    @property
    def texts(self) -> list[str]:
        return [r.text for r in self.records]


def _parse_records(path) -> list[TextRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = TextRecord(
                    id=int(obj["id"]), text=str(obj["text"]), source=str(obj.get("source", ""))
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"records: bad entry at {path}:{lineno}: {exc}") from exc
            records.append(rec)
    for i, rec in enumerate(records):
        if rec.id != i:
            raise FormatError(
                f"records: ids must be contiguous from 0, got id={rec.id} at position {i}: {path}"
            )
        if not rec.text:
            raise FormatError(f"records: empty text for id={rec.id}: {path}")
    return records


def load_records(records_path) -> list[TextRecord]:
    """Load and validate caption records without an embedding matrix."""
    return _parse_records(records_path)


def load_text_table(records_path, embeddings_path) -> AlignedTextTable:
    """Load records and their embedding matrix, enforcing row alignment.

    An empty records file paired with an empty (zero-byte) embeddings file
    yields an empty table; downstream index builds reject it.
    """
    records = _parse_records(records_path)
    embeddings_path = Path(embeddings_path)
    if len(records) == 0 and embeddings_path.stat().st_size == 0:
        return AlignedTextTable(records=[], embeddings=np.zeros((0, 0), dtype=np.float32))
    embeddings = load_tensor(embeddings_path)
    if embeddings.ndim != 2:
        raise FormatError(
            f"embeddings: expected a 2-D matrix, got ndim={embeddings.ndim}: {embeddings_path}"
        )
    if len(records) != embeddings.shape[0]:
        raise AlignmentError(
            f"record count {len(records)} != embedding row count {embeddings.shape[0]}"
        )
    return AlignedTextTable(records=records, embeddings=embeddings)


def save_text_table(table: AlignedTextTable, records_path, embeddings_path) -> None:
    with open(records_path, "w", encoding="utf-8") as fh:
        for rec in table.records:
            fh.write(
                json.dumps({"id": rec.id, "text": rec.text, "source": rec.source}, sort_keys=True)
            )
            fh.write("\n")
    if len(table) == 0:
        Path(embeddings_path).write_bytes(b"")
        return
    save_tensor(table.embeddings, embeddings_path)
