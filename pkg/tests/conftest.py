"""Shared fixtures: a fully synthetic five-region world for end-to-end runs.

The image is a 40x40 grid of five horizontal bands (sky, tree, car, dog,
cat), built so every stage has an unambiguous right answer: band features
are orthogonal basis vectors, captions cluster tightly around the band
directions, and the word/sentence tables use the same constructed geometry.
"""

import json

import numpy as np
import pytest
from PIL import Image

from tagseg.dense_features import DenseFeatureMap, save_feature_map
from tagseg.tensor_store import save_tensor

BAND_WORDS = ["sky", "tree", "car", "dog", "cat"]
BAND_PLURALS = {"sky": "skies", "tree": "trees", "car": "cars", "dog": "dogs", "cat": "cats"}
DISTRACTORS = ["photo", "park", "grass", "house", "closeup", "beach", "picture"]

PATCH = 4
GRID = 20  # 20x20 patches -> 80x80 pixels
DINO_DIM = 8
CLIP_DIM = 16


def band_of_patch_row(row):
    return row // (GRID // 5)  # five equal horizontal bands


def caption_texts(word):
    plural = BAND_PLURALS[word]
    return [
        f"a photo of a {word}",
        f"a photo of two {plural}",
        f"the {word} in the park",
        f"a {word} on the grass",
        f"one {word} near the house",
        f"a closeup of the {word}",
        f"the {plural} at the beach",
        f"a picture of the {word}",
        f"this {word} is beautiful",
        f"a {word} and another {word}",
    ]


def write_records(path, texts, source="toy"):
    with open(path, "w") as fh:
        for i, text in enumerate(texts):
            fh.write(json.dumps({"id": i, "text": text, "source": source}) + "\n")


def build_world(root):
    """Materialize features, database inputs, tables, and ground truth."""
    rng = np.random.default_rng(2024)
    (root / "features" / "dino").mkdir(parents=True)
    (root / "features" / "clip").mkdir(parents=True)
    (root / "captions").mkdir()
    (root / "word_table").mkdir()
    (root / "sbert_table").mkdir()
    (root / "gt").mkdir()

    # patch-grid features: one orthogonal direction per band
    dino = np.zeros((DINO_DIM, GRID, GRID), dtype=np.float32)
    clip = np.zeros((CLIP_DIM, GRID, GRID), dtype=np.float32)
    for row in range(GRID):
        band = band_of_patch_row(row)
        dino[band, row, :] = 1.0
        clip[band, row, :] = 1.0
    size = GRID * PATCH
    save_feature_map(
        DenseFeatureMap(values=dino, image_size=(size, size), patch_size=PATCH,
                        source="dinov2-vitl14"),
        root / "features" / "dino" / "img1.tens",
    )
    save_feature_map(
        DenseFeatureMap(values=clip, image_size=(size, size), patch_size=PATCH,
                        source="clip-vitl14-value"),
        root / "features" / "clip" / "img1.tens",
    )

    # caption database: ten captions per band word, clustered near its axis
    texts, embeddings = [], []
    for band, word in enumerate(BAND_WORDS):
        for text in caption_texts(word):
            vec = np.zeros(CLIP_DIM)
            vec[band] = 1.0
            vec += 0.05 * rng.standard_normal(CLIP_DIM)
            texts.append(text)
            embeddings.append(vec / np.linalg.norm(vec))
    write_records(root / "captions" / "records.jsonl", texts)
    save_tensor(np.array(embeddings, dtype=np.float32), root / "captions" / "embeddings.tens")

    # word table: band words on their axes, distractor nouns on spare axes
    vocab = list(BAND_WORDS) + DISTRACTORS
    vecs = []
    for i, _ in enumerate(BAND_WORDS):
        vecs.append(np.eye(CLIP_DIM)[i])
    for j, _ in enumerate(DISTRACTORS):
        vecs.append(np.eye(CLIP_DIM)[len(BAND_WORDS) + j])
    write_records(root / "word_table" / "records.jsonl", vocab)
    save_tensor(np.array(vecs, dtype=np.float32), root / "word_table" / "embeddings.tens")

    # sentence table: each band word is its own class, plus distractors
    write_records(root / "sbert_table" / "records.jsonl", vocab)
    save_tensor(np.array(vecs, dtype=np.float32), root / "sbert_table" / "embeddings.tens")

    (root / "classes.txt").write_text("\n".join(BAND_WORDS) + "\n")

    gt = np.zeros((size, size), dtype=np.uint8)
    for row in range(size):
        gt[row, :] = band_of_patch_row(row // PATCH)
    Image.fromarray(gt, mode="L").save(root / "gt" / "img1.png")
    return root


@pytest.fixture(scope="session")
def world(tmp_path_factory):
    return build_world(tmp_path_factory.mktemp("world"))


def pytest_runtest_logreport(report):
    """Print one line per acceptance criterion at the end of its test."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if name.startswith("test_criterion"):
        number = name.split("_")[2]
        status = "PASS" if report.passed else "FAIL"
        print(f"\nCRITERION {int(number)}: {status} ({name})")
