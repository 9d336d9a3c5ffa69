"""Caption database with exact and inverted-lists cosine retrieval.

Database rows are L2-normalized at build time; queries are normalized per
call, so similarity reduces to one fused dot-product pass. The approximate
index partitions rows by a deterministic k-means coarse quantizer and
searches only the posting lists of the nearest centroids.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, ParameterError
from .segmenter import DeterministicKMeans
from .tensor_store import AlignedTextTable, load_tensor, load_text_table, save_tensor, save_text_table
from .validation import l2_normalize_rows

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
RECORDS_NAME = "records.jsonl"
EMBEDDINGS_NAME = "embeddings.tens"
CENTROIDS_NAME = "centroids.tens"
POSTINGS_NAME = "postings.bin"


@dataclass
class CaptionDatabase:
    """Aligned captions and unit-norm embeddings; zero rows are excluded."""

    table: AlignedTextTable
    excluded: np.ndarray  # bool per row

    @property
    def dim(self) -> int:
        return self.table.dim

    def __len__(self) -> int:
        return len(self.table)

    @property
    def valid_ids(self) -> np.ndarray:
        return np.nonzero(~self.excluded)[0]


def build_database(table: AlignedTextTable) -> CaptionDatabase:
    """Normalize embedding rows; flag zero-norm rows as unsearchable."""
    if len(table) == 0:
        raise InputError("caption database: table is empty")
    normalized, zero = l2_normalize_rows(table.embeddings)
    if zero.any():
        logger.warning(
            "caption database: %d zero-norm rows excluded from search: %s",
            int(zero.sum()), np.nonzero(zero)[0][:16].tolist(),
        )
    return CaptionDatabase(
        table=AlignedTextTable(records=table.records, embeddings=normalized),
        excluded=zero,
    )


@dataclass(frozen=True)
class RetrievalHit:
    row_id: int
    text: str
    score: float


@dataclass(frozen=True)
class RetrievalResult:
    """Hits ordered by score descending, ties by ascending row id."""

    hits: tuple[RetrievalHit, ...]
    degenerate: bool = False

    @property
    def ids(self) -> list[int]:
        return [h.row_id for h in self.hits]

    @property
    def scores(self) -> list[float]:
        return [h.score for h in self.hits]

    def __len__(self) -> int:
        return len(self.hits)


def _normalized_query(query, dim: int) -> np.ndarray | None:
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != dim:
        raise InputError(f"query: expected dimension {dim}, got {q.shape[0]}")
    if not np.all(np.isfinite(q)):
        raise InputError("query: contains non-finite entries")
    norm = float(np.linalg.norm(q))
    if norm == 0.0:
        return None
    return q / norm


def _select_top(scores: np.ndarray, ids: np.ndarray, n: int) -> np.ndarray:
    """Positions of the top-n by (score desc, id asc); exact under ties."""
    count = len(ids)
    n_eff = min(n, count)
    if n_eff == 0:
        return np.empty(0, dtype=np.int64)
    if n_eff == count or count <= 4096:
        order = np.lexsort((ids, -scores))
        return order[:n_eff]
    part = np.argpartition(-scores, n_eff - 1)[:n_eff]
    threshold = scores[part].min()
    above = np.nonzero(scores > threshold)[0]
    tied = np.nonzero(scores == threshold)[0]
    tied = tied[np.argsort(ids[tied], kind="stable")]
    chosen = np.concatenate([above, tied[: n_eff - len(above)]])
    return chosen[np.lexsort((ids[chosen], -scores[chosen]))]


def _make_result(db: CaptionDatabase, row_ids: np.ndarray, scores: np.ndarray) -> RetrievalResult:
    hits = tuple(
        RetrievalHit(
            row_id=int(row),
            text=db.table.records[int(row)].text,
            score=float(np.clip(score, -1.0, 1.0)),
        )
        for row, score in zip(row_ids, scores)
    )
    return RetrievalResult(hits=hits)


class ExactIndex:
    """Brute-force cosine search over all non-excluded rows."""

    kind = "exact"

    def __init__(self, db: CaptionDatabase):
        self.db = db
        self._valid = db.valid_ids
        self._matrix = db.table.embeddings[self._valid]

    def search(self, query, n: int) -> RetrievalResult:
        if n < 1:
            raise ParameterError(f"n: must be >= 1, got {n}")
        q = _normalized_query(query, self.db.dim)
        if q is None:
            return RetrievalResult(hits=(), degenerate=True)
        scores = self._matrix @ q
        top = _select_top(scores, self._valid, n)
        return _make_result(self.db, self._valid[top], scores[top])


class InvertedListsIndex:
    """Coarse-quantized search scanning only the probed posting lists."""

    kind = "ivf"

    def __init__(self, db: CaptionDatabase, centroids: np.ndarray,
                 postings: list[np.ndarray], seed: int, probe_count: int):
        self.db = db
        self.centroids = np.ascontiguousarray(centroids, dtype=np.float32)
        self.postings = [np.asarray(p, dtype=np.int64) for p in postings]
        self.seed = seed
        self.probe_count = probe_count

    @property
    def n_lists(self) -> int:
        return len(self.postings)

    def search(self, query, n: int, probe_count: int | None = None) -> RetrievalResult:
        if n < 1:
            raise ParameterError(f"n: must be >= 1, got {n}")
        probes = self.probe_count if probe_count is None else probe_count
        if not 1 <= probes <= self.n_lists:
            raise ParameterError(
                f"probe_count: must be in 1..{self.n_lists}, got {probes}"
            )
        q = _normalized_query(query, self.db.dim)
        if q is None:
            return RetrievalResult(hits=(), degenerate=True)
        dist = np.sum((self.centroids.astype(np.float64) - q) ** 2, axis=1)
        probe_order = np.lexsort((np.arange(self.n_lists), dist))[:probes]
        lists = [self.postings[c] for c in probe_order if len(self.postings[c])]
        if not lists:
            return RetrievalResult(hits=())
        candidates = np.concatenate(lists)
        scores = self.db.table.embeddings[candidates] @ q
        top = _select_top(scores, candidates, n)
        return _make_result(self.db, candidates[top], scores[top])


def default_lists(n_valid: int) -> int:
    return max(1, math.ceil(math.sqrt(n_valid)))


def default_probe_count(n_lists: int) -> int:
    return max(1, math.ceil(n_lists / 8))


def build_index(db: CaptionDatabase, kind: str = "exact", lists: int | None = None,
                seed: int = 0, probe_count: int | None = None):
    """Build a searchable index over the database, exact or inverted-lists."""
    if kind == "exact":
        return ExactIndex(db)
    if kind != "ivf":
        raise ParameterError(f"index kind: expected 'exact' or 'ivf', got {kind!r}")

    valid = db.valid_ids
    n_valid = len(valid)
    if n_valid == 0:
        raise InputError("index: no searchable rows (all embeddings were zero)")
    n_lists = default_lists(n_valid) if lists is None else lists
    if not 1 <= n_lists <= n_valid:
        raise ParameterError(f"lists: must be in 1..{n_valid}, got {n_lists}")

    model = DeterministicKMeans(n_clusters=n_lists, seed=seed).fit(
        db.table.embeddings[valid]
    )
    labels = model.labels_
    postings = [valid[labels == c] for c in range(n_lists)]
    probes = default_probe_count(n_lists) if probe_count is None else probe_count
    if not 1 <= probes <= n_lists:
        raise ParameterError(f"probe_count: must be in 1..{n_lists}, got {probes}")
    return InvertedListsIndex(
        db=db,
        centroids=model.cluster_centers_.astype(np.float32),
        postings=postings,
        seed=seed,
        probe_count=probes,
    )


def top_n(index, query, n: int) -> RetrievalResult:
    """Retrieve the n most cosine-similar captions to the query embedding."""
    return index.search(query, n)


def _encode_postings(postings: list[np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(postings))]
    for ids in postings:
        arr = np.asarray(ids, dtype=np.int64)
        if arr.size and (arr[0] < 0 or arr[-1] >= 1 << 32):
            raise FormatError("postings: row ids exceed the unsigned 32-bit range")
        parts.append(struct.pack("<I", arr.size))
        if arr.size:
            deltas = arr.copy()
            deltas[1:] = arr[1:] - arr[:-1]
            parts.append(deltas.astype("<u4").tobytes())
    return b"".join(parts)


def _decode_postings(data: bytes) -> list[np.ndarray]:
    if len(data) < 4:
        raise FormatError("postings: truncated header")
    (n_lists,) = struct.unpack_from("<I", data, 0)
    offset = 4
    postings = []
    for _ in range(n_lists):
        if len(data) < offset + 4:
            raise FormatError("postings: truncated list header")
        (count,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if len(data) < offset + 4 * count:
            raise FormatError("postings: truncated list payload")
        deltas = np.frombuffer(data, dtype="<u4", count=count, offset=offset)
        offset += 4 * count
        postings.append(np.cumsum(deltas.astype(np.int64)) if count else np.empty(0, np.int64))
    if offset != len(data):
        raise FormatError("postings: trailing bytes")
    return postings


def save_index(index, out_dir) -> None:
    """Persist the database plus index manifest into a directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    db = index.db
    save_text_table(db.table, out_dir / RECORDS_NAME, out_dir / EMBEDDINGS_NAME)
    manifest = {
        "kind": index.kind,
        "count": len(db),
        "dim": db.dim,
        "excluded": np.nonzero(db.excluded)[0].tolist(),
    }
    if index.kind == "ivf":
        manifest.update(
            {
                "lists": index.n_lists,
                "seed": index.seed,
                "probe_count": index.probe_count,
                "centroids": CENTROIDS_NAME,
                "postings": POSTINGS_NAME,
            }
        )
        save_tensor(index.centroids, out_dir / CENTROIDS_NAME)
        (out_dir / POSTINGS_NAME).write_bytes(_encode_postings(index.postings))
    (out_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_index(directory):
    """Load a persisted database and its index; returns the index."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise InputError(f"index: missing manifest {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    table = load_text_table(directory / RECORDS_NAME, directory / EMBEDDINGS_NAME)
    if len(table) != manifest.get("count"):
        raise FormatError(
            f"index: manifest count {manifest.get('count')} != table size {len(table)}"
        )
    excluded = np.zeros(len(table), dtype=bool)
    excluded[np.asarray(manifest.get("excluded", []), dtype=np.int64)] = True
    db = CaptionDatabase(table=table, excluded=excluded)

    kind = manifest.get("kind")
    if kind == "exact":
        return ExactIndex(db)
    if kind != "ivf":
        raise FormatError(f"index: unknown kind {kind!r} in manifest")
    centroids = load_tensor(directory / manifest["centroids"])
    postings = _decode_postings((directory / manifest["postings"]).read_bytes())
    if len(postings) != manifest["lists"]:
        raise FormatError(
            f"index: manifest lists {manifest['lists']} != stored {len(postings)}"
        )
    return InvertedListsIndex(
        db=db,
        centroids=centroids,
        postings=postings,
        seed=int(manifest.get("seed", 0)),
        probe_count=int(manifest["probe_count"]),
    )
