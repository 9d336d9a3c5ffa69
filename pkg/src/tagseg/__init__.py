"""tagseg: open-vocabulary segmentation over precomputed dense features.

The engine consumes patch-grid feature tensors and a caption-embedding
database, oversegments each image with deterministic k-means, names every
segment by caption retrieval and word filtering, and evaluates label maps
against ground truth with sentence-embedding reassignment.
"""

from .caption_index import (
    CaptionDatabase,
    ExactIndex,
    InvertedListsIndex,
    RetrievalHit,
    RetrievalResult,
    build_database,
    build_index,
    load_index,
    save_index,
    top_n,
)
from .dense_features import (
    DenseFeatureMap,
    PixelFeatureMap,
    cosine,
    l2_normalize,
    load_feature_map,
    save_feature_map,
    upsample,
)
from .errors import (
    AlignmentError,
    DegenerateVectorWarning,
    FormatError,
    InputError,
    ParameterError,
    TagError,
)
from .evaluator import (
    EvalReport,
    GroundTruth,
    LabelMap,
    SentenceEmbeddingTable,
    evaluate,
    load_class_list,
    miou,
    reassign,
)
from .pipeline import PipelineConfig, SegmentationResult, segment_image
from .segmenter import (
    DeterministicKMeans,
    SegmentEmbeddings,
    SegmentPartition,
    kmeans,
    pool_segments,
)
from .tensor_store import (
    AlignedTextTable,
    TextRecord,
    load_tensor,
    load_text_table,
    save_tensor,
    save_text_table,
)
from .word_pipeline import (
    CandidateWordSet,
    PosLexicon,
    SegmentLabel,
    WordEmbeddingTable,
    assign_category,
    filter_candidates,
    singularize,
    standardize,
    tokenize_and_remove,
)

__version__ = "0.1.0"
