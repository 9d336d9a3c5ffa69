#!/usr/bin/env python3
"""Full-stack sanity check on real data (requires model checkpoints).

Drives both CLIs end to end: extract dense features for a folder of
evaluation images, embed a caption corpus, build the database, segment,
and verify that in at least 30% of images some predicted word has
sentence-embedding similarity >= 0.5 to a ground-truth class actually
present in that image. This is a floor for wiring correctness, not a
benchmark result.

Example:
    python scripts/sanity_check.py \
        --images voc/val_images --gt voc/val_labels \
        --captions cc12m_100k.jsonl --classes voc20.txt \
        --workdir /tmp/sanity
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
from pathlib import Path

import numpy as np


def run(*command):
    printable = " ".join(str(c) for c in command)
    print(f"+ {printable}", flush=True)
    subprocess.run([str(c) for c in command], check=True)


def load_table(directory: Path) -> dict[str, np.ndarray]:
    sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
    from tag_extractor.tensor_io import load_tensor, read_records

    texts = read_records(directory / "records.jsonl")
    matrix = load_tensor(directory / "embeddings.tens")
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    matrix = matrix / norms
    return {t.strip().lower(): matrix[i] for i, t in enumerate(texts)}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--images", required=True, help="evaluation images (~20)")
    parser.add_argument("--gt", required=True, help="indexed ground-truth PNGs")
    parser.add_argument("--captions", required=True, help="caption records jsonl (~100k)")
    parser.add_argument("--classes", required=True, help="class list, one per line")
    parser.add_argument("--workdir", required=True)
    parser.add_argument("--clusters", default="15")
    parser.add_argument("--lists", default=None, help="inverted lists (default ceil(sqrt(N)))")
    parser.add_argument("--min-fraction", type=float, default=0.30)
    parser.add_argument("--min-similarity", type=float, default=0.5)
    args = parser.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    dino_dir, clip_dir = work / "dino", work / "clip"
    caption_table = work / "caption_table"
    words_path = work / "words.txt"
    vocab_dir, sbert_dir = work / "vocab", work / "sbert"
    db_dir, out_dir = work / "db", work / "pred"

    run("tag-extract", "dino", "--images", args.images, "--out", dino_dir)
    run("tag-extract", "clip", "--images", args.images, "--out", clip_dir)
    run("tag-extract", "captions", "--records", args.captions, "--out", caption_table)
    run("tag", "export-vocab", "--captions", args.captions, "--out", words_path)
    run("tag-extract", "vocab", "--words", words_path, "--out", vocab_dir)

    build = ["tag", "build-db",
             "--captions", caption_table / "records.jsonl",
             "--embeddings", caption_table / "embeddings.tens",
             "--index", "ivf", "--out", db_dir]
    if args.lists:
        build += ["--lists", args.lists]
    run(*build)

    run("tag", "segment", "--dino", dino_dir, "--clip", clip_dir,
        "--db", db_dir, "--word-table", vocab_dir,
        "--out", out_dir, "--clusters", args.clusters)

    # sentence table over every predicted word plus the class names
    predicted = set()
    for legend_path in sorted(out_dir.glob("*.legend.json")):
        predicted.update(json.loads(legend_path.read_text())["legend"].values())
    pred_words = work / "predicted_words.txt"
    pred_words.write_text("\n".join(sorted(predicted)) + "\n")
    run("tag-extract", "sbert", "--words", pred_words, "--words", args.classes,
        "--out", sbert_dir)

    table = load_table(sbert_dir)
    class_names = [
        line.strip() for line in Path(args.classes).read_text().splitlines()
        if line.strip() and not line.startswith("#")
    ]

    from PIL import Image

    satisfied = 0
    total = 0
    for legend_path in sorted(out_dir.glob("*.legend.json")):
        stem = legend_path.name.removesuffix(".legend.json")
        gt_path = Path(args.gt) / f"{stem}.png"
        if not gt_path.exists():
            print(f"  {stem}: no ground truth, skipped")
            continue
        total += 1
        with Image.open(gt_path) as img:
            present_ids = {int(v) for v in np.unique(np.asarray(img)) if int(v) < len(class_names)}
        present = [class_names[i] for i in sorted(present_ids)]
        words = set(json.loads(legend_path.read_text())["legend"].values())
        best = 0.0
        for word in words:
            word_vec = table.get(word.lower())
            if word_vec is None:
                continue
            for name in present:
                class_vec = table.get(name.lower())
                if class_vec is not None:
                    best = max(best, float(word_vec @ class_vec))
        hit = best >= args.min_similarity
        satisfied += int(hit)
        print(f"  {stem}: best word-class similarity {best:.3f} {'OK' if hit else '--'}")

    fraction = satisfied / total if total else 0.0
    print(f"\n{satisfied}/{total} images with similarity >= {args.min_similarity} "
          f"({fraction:.0%}, floor {args.min_fraction:.0%})")
    return 0 if fraction >= args.min_fraction else 1


if __name__ == "__main__":
    sys.exit(main())
