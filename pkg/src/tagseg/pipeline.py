"""Per-image segmentation pipeline: cluster, pool, retrieve, name.

This is the glue between the numeric stages and the word stages; the CLI
wraps it with file IO. Everything here is pure given its inputs, so a
fixed (features, database, config, seed) tuple reproduces identical output.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .caption_index import InvertedListsIndex, RetrievalResult
from .dense_features import DenseFeatureMap, PixelFeatureMap, upsample, UPSAMPLE_MODES
from .errors import InputError, ParameterError
from .evaluator import LabelMap
from .segmenter import (
    DEFAULT_CLUSTERS,
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    SegmentPartition,
    kmeans,
    pool_segments,
)
from .word_pipeline import (
    CandidateWordSet,
    PosLexicon,
    SegmentLabel,
    WordEmbeddingTable,
    assign_category,
    filter_candidates,
    standardize,
    tokenize_and_remove,
)

PIPELINE_STAGES = ("remove", "standardize", "filter")
CLUSTER_SPACES = ("pixel", "patch")


@dataclass(frozen=True)
class PipelineConfig:
    clusters: int = DEFAULT_CLUSTERS
    topn: int = 10
    freq_threshold: int = 2
    seed: int = 0
    kmeans_max_iters: int = DEFAULT_MAX_ITER
    kmeans_tol: float = DEFAULT_TOL
    upsample_mode: str = "bilinear"
    cluster_space: str = "pixel"
    probes: int | None = None
    count_per_caption: bool = False
    keep_tags: tuple[str, ...] = ("noun",)
    disabled_stages: frozenset[str] = frozenset()
    n_workers: int = 1

    def validate(self) -> "PipelineConfig":
        for name in ("clusters", "topn", "freq_threshold"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name}: must be >= 1, got {getattr(self, name)}")
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ParameterError(f"upsample_mode: unknown mode {self.upsample_mode!r}")
        if self.cluster_space not in CLUSTER_SPACES:
            raise ParameterError(f"cluster_space: expected one of {CLUSTER_SPACES}")
        unknown = self.disabled_stages - set(PIPELINE_STAGES)
        if unknown:
            raise ParameterError(f"disabled_stages: unknown stages {sorted(unknown)}")
        return self


@dataclass
class SegmentOutcome:
    """Everything learned about one segment, for the per-image report."""

    segment_id: int
    word: str
    score: float
    degenerate: bool
    pixel_count: int
    captions: list[dict] = field(default_factory=list)
    candidates: list[tuple[str, int]] = field(default_factory=list)


@dataclass
class SegmentationResult:
    label_map: LabelMap
    partition: SegmentPartition
    segments: list[SegmentOutcome]


def _patch_partition(dino_map: DenseFeatureMap, config: PipelineConfig) -> SegmentPartition:
    """Cluster the patch grid, then replicate assignments to pixels."""
    grid_h, grid_w = dino_map.grid_size
    patch_features = PixelFeatureMap(values=dino_map.values, source=dino_map.source)
    patch_part = kmeans(
        patch_features, config.clusters, seed=config.seed,
        max_iter=config.kmeans_max_iters, tol=config.kmeans_tol,
        n_workers=config.n_workers,
    )
    height, width = dino_map.image_size
    rows = np.minimum(np.arange(height) // dino_map.patch_size, grid_h - 1)
    cols = np.minimum(np.arange(width) // dino_map.patch_size, grid_w - 1)
    assignment = patch_part.assignment[rows[:, None], cols[None, :]]
    counts = np.bincount(assignment.ravel(), minlength=patch_part.n_segments).astype(np.int64)
    return SegmentPartition(assignment=assignment, counts=counts,
                            n_segments=patch_part.n_segments)


def _segment_tokens(texts: list[str], config: PipelineConfig) -> list[str]:
    tokens: list[str] = []
    for text in texts:
        if "remove" in config.disabled_stages:
            caption_tokens = text.split()
        else:
            caption_tokens = tokenize_and_remove([text])
        if "standardize" not in config.disabled_stages:
            caption_tokens = standardize(caption_tokens)
        if config.count_per_caption:
            caption_tokens = sorted(set(caption_tokens))
        tokens.extend(caption_tokens)
    return tokens


def _candidates_for(tokens: list[str], segment_id: int, lexicon: PosLexicon,
                    config: PipelineConfig) -> CandidateWordSet:
    if "filter" in config.disabled_stages:
        counts = Counter(tokens)
        ordered = tuple(sorted(counts.items(), key=lambda item: (-item[1], item[0])))
        return CandidateWordSet(segment_id=segment_id, words=ordered, degenerate=not ordered)
    return filter_candidates(tokens, config.freq_threshold, lexicon,
                             segment_id=segment_id, keep_tags=config.keep_tags)


def _retrieve(index, vector: np.ndarray, config: PipelineConfig) -> RetrievalResult:
    if isinstance(index, InvertedListsIndex) and config.probes is not None:
        return index.search(vector, config.topn, probe_count=config.probes)
    return index.search(vector, config.topn)


def segment_image(dino_map: DenseFeatureMap, clip_map: DenseFeatureMap, index,
                  word_table: WordEmbeddingTable, lexicon: PosLexicon,
                  config: PipelineConfig) -> SegmentationResult:
    """Run the full per-image pipeline and label every segment."""
    config.validate()
    if dino_map.image_size != clip_map.image_size:
        raise InputError(
            f"segment: feature maps disagree on image size "
            f"{dino_map.image_size} vs {clip_map.image_size}"
        )

    if config.cluster_space == "patch":
        partition = _patch_partition(dino_map, config)
    else:
        dino_pixels = upsample(dino_map, mode=config.upsample_mode)
        partition = kmeans(
            dino_pixels, config.clusters, seed=config.seed,
            max_iter=config.kmeans_max_iters, tol=config.kmeans_tol,
            n_workers=config.n_workers,
        )

    clip_pixels = upsample(clip_map, mode=config.upsample_mode)
    embeddings = pool_segments(partition, clip_pixels)

    segments: list[SegmentOutcome] = []
    legend: dict[int, str] = {}
    sims: dict[int, float] = {}
    for seg_id in range(partition.n_segments):
        vector = embeddings.vectors[seg_id]
        if embeddings.degenerate[seg_id]:
            label = SegmentLabel(seg_id, "unknown", 0.0, degenerate=True)
            retrieval = RetrievalResult(hits=(), degenerate=True)
            candidates = CandidateWordSet(segment_id=seg_id, words=(), degenerate=True)
        else:
            retrieval = _retrieve(index, vector, config)
            tokens = _segment_tokens([hit.text for hit in retrieval.hits], config)
            candidates = _candidates_for(tokens, seg_id, lexicon, config)
            label = assign_category(candidates, vector, word_table)
        legend[seg_id] = label.word
        sims[seg_id] = label.score
        segments.append(
            SegmentOutcome(
                segment_id=seg_id,
                word=label.word,
                score=label.score,
                degenerate=label.degenerate,
                pixel_count=int(partition.counts[seg_id]),
                captions=[
                    {"row_id": h.row_id, "text": h.text, "score": h.score}
                    for h in retrieval.hits
                ],
                candidates=list(candidates.words),
            )
        )

    label_map = LabelMap(grid=partition.assignment, legend=legend, sims=sims)
    return SegmentationResult(label_map=label_map, partition=partition, segments=segments)
