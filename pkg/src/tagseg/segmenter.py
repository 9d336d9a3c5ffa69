"""Segment candidates via deterministic k-means, and per-segment pooling.

The clustering is Lloyd's algorithm with k-means++ seeding over
L2-normalized feature vectors. All reductions run over fixed-size chunks
that are combined in index order, so results are byte-identical for any
worker count; parallelism only changes which thread computes a chunk.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .dense_features import PixelFeatureMap
from .errors import InputError, ParameterError
from .validation import check_finite, check_positive_int, l2_normalize_rows

logger = logging.getLogger(__name__)

DEFAULT_CLUSTERS = 15
DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-4
_CHUNK = 8192


@dataclass(frozen=True)
class SegmentPartition:
    """Per-pixel cluster ids with per-cluster pixel counts.

    Every id in 0..n_segments-1 appears at least once; ids of clusters
    emptied by duplicate inputs are compacted away.
    """

    assignment: np.ndarray  # H x W int32
    counts: np.ndarray  # n_segments int64
    n_segments: int

    def __post_init__(self):
        if self.assignment.ndim != 2:
            raise InputError("partition: assignment must be H x W")
        if int(self.counts.sum()) != self.assignment.size:
            raise InputError("partition: counts do not sum to the pixel count")
        if self.n_segments != len(self.counts) or np.any(self.counts < 1):
            raise InputError("partition: every reported cluster must be non-empty")


@dataclass(frozen=True)
class SegmentEmbeddings:
    """One pooled embedding per segment; degenerate marks all-zero rows."""

    vectors: np.ndarray  # n_segments x D float32
    source: str = ""
    degenerate: np.ndarray | None = None

    def __post_init__(self):
        if self.degenerate is None:
            object.__setattr__(
                self, "degenerate", ~np.any(self.vectors != 0.0, axis=1)
            )


def _kmeans_plusplus(points: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((n_clusters, points.shape[1]), dtype=np.float64)
    centers[0] = points[int(rng.integers(n))]
    dist_sq = np.sum((points - centers[0]) ** 2, axis=1)
    for idx in range(1, n_clusters):
        total = float(dist_sq.sum())
        if total <= 0.0:
            pick = int(rng.integers(n))
        else:
            draw = rng.random() * total
            pick = int(min(np.searchsorted(np.cumsum(dist_sq), draw), n - 1))
        centers[idx] = points[pick]
        dist_sq = np.minimum(dist_sq, np.sum((points - centers[idx]) ** 2, axis=1))
    return centers


def _assign_chunk(chunk: np.ndarray, centers: np.ndarray, center_sq: np.ndarray):
    """Labels, per-cluster sums/counts, inertia, and own-distance for one chunk."""
    n_clusters = centers.shape[0]
    dist = (
        np.sum(chunk * chunk, axis=1)[:, None]
        - 2.0 * (chunk @ centers.T)
        + center_sq[None, :]
    )
    labels = np.argmin(dist, axis=1)
    own = dist[np.arange(chunk.shape[0]), labels]
    counts = np.bincount(labels, minlength=n_clusters)
    sums = np.zeros((n_clusters, chunk.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, chunk)
    return labels, sums, counts, float(own.sum()), own


class DeterministicKMeans(BaseEstimator, ClusterMixin):
    """Seeded k-means whose output is independent of the worker count.

    Parameters
    ----------
    n_clusters : number of centers.
    seed : seed for the k-means++ initialization.
    max_iter : Lloyd iteration cap.
    tol : convergence threshold on relative center movement.
    n_workers : threads used for the chunked assignment step.

    Attributes after ``fit``: ``cluster_centers_`` (float64),
    ``labels_``, ``inertia_``, ``n_iter_``, ``inertia_history_``.
    """

    def __init__(self, n_clusters=DEFAULT_CLUSTERS, seed=0, max_iter=DEFAULT_MAX_ITER,
                 tol=DEFAULT_TOL, n_workers=1):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol
        self.n_workers = n_workers

    def _map_chunks(self, points: np.ndarray, centers: np.ndarray):
        center_sq = np.sum(centers * centers, axis=1)
        chunks = [points[start : start + _CHUNK] for start in range(0, points.shape[0], _CHUNK)]
        if self.n_workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=self.n_workers) as pool:
                results = list(pool.map(lambda c: _assign_chunk(c, centers, center_sq), chunks))
        else:
            results = [_assign_chunk(c, centers, center_sq) for c in chunks]
        labels = np.concatenate([r[0] for r in results])
        own = np.concatenate([r[4] for r in results])
        sums = np.zeros((centers.shape[0], points.shape[1]), dtype=np.float64)
        counts = np.zeros(centers.shape[0], dtype=np.int64)
        inertia = 0.0
        for _, chunk_sums, chunk_counts, chunk_inertia, _ in results:  # fixed chunk order
            sums += chunk_sums
            counts += chunk_counts
            inertia += chunk_inertia
        return labels, sums, counts, inertia, own

    def fit(self, X, y=None):
        points = np.ascontiguousarray(X, dtype=np.float64)
        if points.ndim != 2:
            raise InputError("kmeans: expected an N x D matrix")
        check_finite(points, "kmeans input")
        n_clusters = check_positive_int(self.n_clusters, "n_clusters")
        if n_clusters > points.shape[0]:
            raise ParameterError(
                f"n_clusters: {n_clusters} exceeds the number of points {points.shape[0]}"
            )

        rng = np.random.default_rng(self.seed)
        centers = _kmeans_plusplus(points, n_clusters, rng)
        history = []
        labels = None
        for iteration in range(check_positive_int(self.max_iter, "max_iter")):
            labels, sums, counts, inertia, own = self._map_chunks(points, centers)
            history.append(inertia)
            new_centers = centers.copy()
            filled = counts > 0
            new_centers[filled] = sums[filled] / counts[filled, None]
            if not np.all(filled):
                self._repair_empty(new_centers, ~filled, points, own)
            shift = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
            scale = max(float(np.max(np.linalg.norm(centers, axis=1))), 1e-12)
            centers = new_centers
            if shift / scale < float(self.tol):
                break

        labels, _, counts, inertia, _ = self._map_chunks(points, centers)
        self.cluster_centers_ = centers
        self.labels_ = labels.astype(np.int32)
        self.cluster_sizes_ = counts
        self.inertia_ = inertia
        self.inertia_history_ = history
        self.n_iter_ = len(history)
        return self

    @staticmethod
    def _repair_empty(centers, empty_mask, points, own_dist):
        """Reseed empty centers from the points farthest from their centers."""
        order = np.argsort(-own_dist, kind="stable")
        empty_ids = np.nonzero(empty_mask)[0]
        for rank, center_id in enumerate(empty_ids):
            if rank >= len(order) or own_dist[order[rank]] <= 0.0:
                warnings.warn(
                    "kmeans: fewer distinct points than clusters; some clusters stay empty",
                    stacklevel=3,
                )
                break
            centers[center_id] = points[order[rank]]

    def predict(self, X):
        points = np.ascontiguousarray(X, dtype=np.float64)
        labels, _, _, _, _ = self._map_chunks(points, self.cluster_centers_)
        return labels.astype(np.int32)

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


def _compact_labels(labels: np.ndarray, n_clusters: int) -> tuple[np.ndarray, np.ndarray]:
    """Relabel so only populated clusters remain, preserving id order."""
    counts = np.bincount(labels.ravel(), minlength=n_clusters)
    populated = np.nonzero(counts > 0)[0]
    remap = np.full(n_clusters, -1, dtype=np.int32)
    remap[populated] = np.arange(len(populated), dtype=np.int32)
    return remap[labels], counts[populated].astype(np.int64)


def kmeans(features: PixelFeatureMap, n_clusters: int, seed: int = 0,
           max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
           n_workers: int = 1) -> SegmentPartition:
    """Cluster per-pixel features into segment candidates (oversegmentation).

    Features are L2-normalized per pixel before clustering; the result is
    deterministic for a fixed (features, n_clusters, seed).
    """
    n_clusters = check_positive_int(n_clusters, "n_clusters")
    height, width = features.image_size
    if n_clusters > height * width:
        raise ParameterError(f"n_clusters: {n_clusters} exceeds pixel count {height * width}")
    flat = features.values.reshape(features.dim, -1).T  # N x D
    normalized, zero_rows = l2_normalize_rows(flat)
    if zero_rows.any():
        logger.warning("kmeans: %d all-zero feature vectors", int(zero_rows.sum()))
    model = DeterministicKMeans(
        n_clusters=n_clusters, seed=seed, max_iter=max_iter, tol=tol, n_workers=n_workers
    ).fit(normalized)
    compacted, counts = _compact_labels(model.labels_, n_clusters)
    if len(counts) < n_clusters:
        warnings.warn(
            f"kmeans: merged duplicate features, {len(counts)} of {n_clusters} clusters populated",
            stacklevel=2,
        )
    return SegmentPartition(
        assignment=compacted.reshape(height, width),
        counts=counts,
        n_segments=len(counts),
    )


def pool_segments(partition: SegmentPartition, clip_features: PixelFeatureMap) -> SegmentEmbeddings:
    """Average raw per-pixel features over each segment's pixels."""
    height, width = clip_features.image_size
    if partition.assignment.shape != (height, width):
        raise InputError(
            f"pool: partition {partition.assignment.shape} does not match "
            f"features {(height, width)}"
        )
    flat = clip_features.values.reshape(clip_features.dim, -1).astype(np.float64)
    labels = partition.assignment.ravel()
    sums = np.zeros((partition.n_segments, clip_features.dim), dtype=np.float64)
    np.add.at(sums, labels, flat.T)
    counts = np.bincount(labels, minlength=partition.n_segments)
    if np.any(counts == 0):
        raise InputError("pool: partition contains an empty segment")
    means = (sums / counts[:, None]).astype(np.float32)
    return SegmentEmbeddings(vectors=means, source=clip_features.source)
