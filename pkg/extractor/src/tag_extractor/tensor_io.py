"""Writers for the engine's wire formats (see the engine's docs/format.md).

The extractor interacts with the segmentation engine only through files,
so the byte layout is implemented here against the documented contract
rather than imported from the engine.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TAGTENS1"
DTYPE_F32 = 0


def save_tensor(values: np.ndarray, path) -> None:
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim not in (1, 2, 3):
        raise ValueError(f"tensor must have 1..3 dims, got {arr.ndim}")
    if any(d < 1 for d in arr.shape):
        raise ValueError(f"all dims must be >= 1, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", DTYPE_F32, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def load_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"bad magic in {path}")
    dtype_code, ndim = struct.unpack_from("<BB", data, 8)
    if dtype_code != DTYPE_F32 or ndim not in (1, 2, 3):
        raise ValueError(f"unsupported header in {path}")
    dims = struct.unpack_from(f"<{ndim}Q", data, 10)
    count = int(np.prod(dims))
    return np.frombuffer(data, dtype="<f4", count=count, offset=10 + 8 * ndim).reshape(dims).copy()


def save_feature_sidecar(tensor_path, image_size, patch_size: int, source: str) -> None:
    meta = {
        "image_size": [int(image_size[0]), int(image_size[1])],
        "patch_size": int(patch_size),
        "source": source,
    }
    Path(tensor_path).with_suffix(".json").write_text(
        json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8"
    )


def write_records(path, texts, source: str = "") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, text in enumerate(texts):
            fh.write(json.dumps({"id": i, "text": text, "source": source}, sort_keys=True))
            fh.write("\n")


def read_records(path) -> list[str]:
    texts = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            texts.append(str(json.loads(line)["text"]))
    return texts
