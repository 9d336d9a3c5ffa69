"""Caption text to segment categories: clean, normalize, filter, assign.

Retrieved captions pass through three stages: noisy-token removal
(URLs, filenames, anything non-alphabetic), normalization to lowercase
singular form, then frequency and part-of-speech filtering. The surviving
candidate words compete by cosine similarity against the segment embedding.
"""

from __future__ import annotations

import logging
import re
import string
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, ParameterError
from .tensor_store import AlignedTextTable, load_text_table
from .validation import l2_normalize_rows

logger = logging.getLogger(__name__)

UNKNOWN_LABEL = "unknown"

POS_TAGS = frozenset({
    "noun", "verb", "adjective", "adverb", "determiner", "pronoun",
    "preposition", "conjunction", "interjection", "numeral",
})

# file extensions that mark a token as a filename, not a word
_EXTENSIONS = frozenset(
    "jpg jpeg png gif bmp tif tiff webp svg ico pdf doc docx xls xlsx ppt "
    "pptx txt csv json xml yaml yml html htm php asp jsp js css md mp3 wav "
    "flac ogg mp4 avi mov mkv webm zip gz bz2 xz tar rar 7z exe dll bin iso".split()
)

_FILENAME = re.compile(r"^[\w.-]+\.([a-zA-Z0-9]{1,5})$")
_STRIP_CHARS = string.punctuation + "‘’“”…«»"

# words ending in "s" that are not plurals; "ss" endings are guarded separately
NON_PLURAL_S = frozenset(
    "bus gas yes his was has its this is as us plus minus versus lens iris "
    "series species news chaos atlas canvas circus campus virus status bonus "
    "focus cactus radius genius tennis basis crisis thesis analysis emphasis "
    "oasis axis physics mathematics economics politics athletics gymnastics "
    "glass grass class brass press dress cross boss loss kiss miss christmas "
    "texas paris swiss pants trousers jeans scissors".split()
)


def tokenize_and_remove(captions) -> list[str]:
    """Whitespace tokenization that drops URLs, filenames, and non-words.

    A surviving token is purely alphabetic once leading and trailing
    punctuation is stripped; case is preserved for the standardize stage.
    """
    tokens: list[str] = []
    for caption in captions:
        for raw in caption.split():
            if "://" in raw:
                continue
            if raw.lower().startswith("www."):
                continue
            core = raw.strip(_STRIP_CHARS)
            if not core:
                continue
            match = _FILENAME.match(core)
            if match and match.group(1).lower() in _EXTENSIONS:
                continue
            if not core.isalpha():
                continue
            tokens.append(core)
    return tokens


def singularize(word: str) -> str:
    """Rule-based plural stripping; idempotent by construction."""
    if word in NON_PLURAL_S:
        return word
    if len(word) >= 5 and word.endswith("ies"):
        return word[:-3] + "y"
    if len(word) >= 5 and word.endswith(("ches", "shes")):
        return word[:-2]
    if len(word) >= 4 and word.endswith(("xes", "zes")):
        return word[:-2]
    if len(word) >= 4 and word.endswith("ses"):
        stem = word[:-2]
        # keep the -es split only for sibilant stems (buses, glasses);
        # otherwise the word is a plain plural (roses -> rose)
        if stem.endswith("ss") or stem in NON_PLURAL_S:
            return stem
        return word[:-1]
    if len(word) >= 3 and word.endswith("s") and not word.endswith("ss"):
        return word[:-1]
    return word


def standardize(tokens) -> list[str]:
    """Lowercase and singularize each token."""
    return [singularize(token.lower()) for token in tokens]


class PosLexicon:
    """Word to part-of-speech tag set, from a word<TAB>tag[,tag...] file."""

    def __init__(self, entries: dict[str, frozenset[str]]):
        self._entries = entries

    @classmethod
    def load(cls, path) -> "PosLexicon":
        entries: dict[str, frozenset[str]] = {}
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"lexicon: expected word<TAB>tags at {path}:{lineno}")
            word, tag_field = parts[0].strip().lower(), parts[1]
            tags = frozenset(t.strip().lower() for t in tag_field.split(",") if t.strip())
            unknown = tags - POS_TAGS
            if unknown:
                raise FormatError(
                    f"lexicon: unknown tags {sorted(unknown)} at {path}:{lineno}"
                )
            entries[word] = tags
        return cls(entries)

    @classmethod
    def bundled(cls) -> "PosLexicon":
        with resources.as_file(resources.files("tagseg").joinpath("data/lexicon.tsv")) as path:
            return cls.load(path)

    def tags(self, word: str) -> frozenset[str] | None:
        return self._entries.get(word)

    def __contains__(self, word: str) -> bool:
        return word in self._entries

    def __len__(self) -> int:
        return len(self._entries)


@dataclass(frozen=True)
class CandidateWordSet:
    """Normalized candidate words with occurrence counts for one segment."""

    segment_id: int
    words: tuple[tuple[str, int], ...]  # (word, count), count desc then word asc
    degenerate: bool = False

    def counts(self) -> dict[str, int]:
        return dict(self.words)


def filter_candidates(tokens, freq_threshold: int, lexicon: PosLexicon,
                      segment_id: int = 0, keep_tags=("noun",)) -> CandidateWordSet:
    """Frequency filter with automatic threshold lowering, then POS filter.

    The effective threshold drops until at least one word survives
    (floor 1), so the most frequent words always remain. Words absent
    from the lexicon are kept; they are usually proper nouns.
    """
    if freq_threshold < 1:
        raise ParameterError(f"freq_threshold: must be >= 1, got {freq_threshold}")
    counts = Counter(tokens)
    if not counts:
        return CandidateWordSet(segment_id=segment_id, words=(), degenerate=True)

    effective = min(freq_threshold, max(counts.values()))
    frequent = {word: n for word, n in counts.items() if n >= effective}

    keep = frozenset(keep_tags)
    kept = {}
    for word, n in frequent.items():
        tags = lexicon.tags(word)
        if tags is None or tags & keep:
            kept[word] = n
    ordered = tuple(sorted(kept.items(), key=lambda item: (-item[1], item[0])))
    return CandidateWordSet(segment_id=segment_id, words=ordered, degenerate=not ordered)


class WordEmbeddingTable:
    """Normalized word or sentence text to unit-norm embedding vector."""

    def __init__(self, mapping: dict[str, np.ndarray]):
        self._mapping = mapping
        self.dim = next(iter(mapping.values())).shape[0] if mapping else 0

    @classmethod
    def from_table(cls, table: AlignedTextTable) -> "WordEmbeddingTable":
        normalized, zero = l2_normalize_rows(table.embeddings)
        mapping: dict[str, np.ndarray] = {}
        for row, record in enumerate(table.records):
            key = record.text.strip().lower()
            if zero[row]:
                logger.warning("embedding table: zero vector for %r, skipped", key)
                continue
            if key in mapping:
                logger.warning("embedding table: duplicate key %r, keeping first", key)
                continue
            mapping[key] = normalized[row]
        return cls(mapping)

    @classmethod
    def load(cls, directory) -> "WordEmbeddingTable":
        directory = Path(directory)
        table = load_text_table(directory / "records.jsonl", directory / "embeddings.tens")
        return cls.from_table(table)

    def merged_with(self, other: "WordEmbeddingTable") -> "WordEmbeddingTable":
        mapping = dict(self._mapping)
        for key, vec in other._mapping.items():
            mapping.setdefault(key, vec)
        return WordEmbeddingTable(mapping)

    def get(self, word: str):
        return self._mapping.get(word.strip().lower())

    def __contains__(self, word: str) -> bool:
        return word.strip().lower() in self._mapping

    def __len__(self) -> int:
        return len(self._mapping)


@dataclass(frozen=True)
class SegmentLabel:
    segment_id: int
    word: str
    score: float
    degenerate: bool = False


def assign_category(candidates: CandidateWordSet, segment_embedding,
                    table: WordEmbeddingTable) -> SegmentLabel:
    """Pick the candidate whose embedding is most cosine-similar.

    Ties break toward the higher occurrence count, then the
    lexicographically smaller word. Candidates missing from the table are
    dropped; if nothing remains the segment is labeled "unknown".
    """
    if candidates.degenerate or not candidates.words:
        return SegmentLabel(candidates.segment_id, UNKNOWN_LABEL, 0.0, degenerate=True)

    query = np.asarray(segment_embedding, dtype=np.float64).ravel()
    norm = float(np.linalg.norm(query))
    if norm == 0.0:
        logger.warning("segment %d: all-zero embedding", candidates.segment_id)
        return SegmentLabel(candidates.segment_id, UNKNOWN_LABEL, 0.0, degenerate=True)
    query /= norm

    scored: list[tuple[float, int, str]] = []
    for word, count in candidates.words:
        vector = table.get(word)
        if vector is None:
            logger.warning("segment %d: no embedding for %r, dropped",
                           candidates.segment_id, word)
            continue
        score = float(np.clip(vector.astype(np.float64) @ query, -1.0, 1.0))
        scored.append((score, count, word))
    if not scored:
        return SegmentLabel(candidates.segment_id, UNKNOWN_LABEL, 0.0, degenerate=True)
    score, _, word = min(scored, key=lambda item: (-item[0], -item[1], item[2]))
    return SegmentLabel(candidates.segment_id, word, score)
