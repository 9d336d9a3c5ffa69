"""Text embedding export: captions, vocabulary words, sentence embeddings.

All exports share the aligned-table layout (records.jsonl +
embeddings.tens). Embeddings are stored as produced by the encoder; the
engine normalizes rows where its contracts require unit length.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch

from .tensor_io import save_tensor, write_records

logger = logging.getLogger(__name__)


class ClipTextEncoder:
    """Batched text embedding through a CLIP text tower."""

    def __init__(self, model, tokenizer, batch_size: int = 64, max_length: int = 77):
        self.model = model
        self.tokenizer = tokenizer
        self.batch_size = batch_size
        self.max_length = max_length

    @torch.no_grad()
    def encode(self, texts: list[str]) -> np.ndarray:
        chunks = []
        for start in range(0, len(texts), self.batch_size):
            batch = texts[start : start + self.batch_size]
            tokens = self.tokenizer(
                batch,
                padding=True,
                truncation=True,
                max_length=self.max_length,
                return_tensors="pt",
            )
            output = self.model.get_text_features(**tokens)
            # plain tensor on older transformers, pooling output on 5.x
            features = getattr(output, "pooler_output", output)
            chunks.append(features.float().cpu().numpy())
        return np.concatenate(chunks, axis=0)


class SentenceEncoder:
    """Sentence-embedding model wrapper (sentence-transformers interface)."""

    def __init__(self, model, batch_size: int = 64):
        self.model = model
        self.batch_size = batch_size

    def encode(self, texts: list[str]) -> np.ndarray:
        out = self.model.encode(
            texts, batch_size=self.batch_size, convert_to_numpy=True,
            show_progress_bar=False,
        )
        return np.asarray(out, dtype=np.float32)


def export_text_table(texts: list[str], encoder, out_dir, source: str,
                      keys: list[str] | None = None) -> Path:
    """Embed texts and write an aligned table directory; returns the dir.

    `keys`, when given, become the stored record texts (lookup keys) while
    `texts` are what the encoder sees, e.g. prompt-templated words.
    """
    if not texts:
        raise ValueError("no texts to embed")
    if keys is not None and len(keys) != len(texts):
        raise ValueError(f"{len(keys)} keys for {len(texts)} texts")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    embeddings = encoder.encode(list(texts)).astype(np.float32)
    if embeddings.shape[0] != len(texts):
        raise RuntimeError(
            f"encoder returned {embeddings.shape[0]} rows for {len(texts)} texts"
        )
    zero_rows = int(np.sum(~np.any(embeddings != 0.0, axis=1)))
    if zero_rows:
        logger.warning("%d all-zero embedding rows in %s", zero_rows, out_dir)
    write_records(out_dir / "records.jsonl", keys if keys is not None else texts, source=source)
    save_tensor(embeddings, out_dir / "embeddings.tens")
    return out_dir


def read_word_list(path) -> list[str]:
    words = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.append(line)
    return words
