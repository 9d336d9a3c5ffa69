"""Command-line entry point: build-db, segment, eval, inspect-index.

Exit codes: 0 success, 2 input error, 3 format error, 4 parameter error.
Relative paths that do not exist are retried under $TAG_DATA_DIR.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from . import caption_index, evaluator
from .dense_features import load_feature_map
from .errors import InputError, ParameterError, TagError
from .pipeline import PIPELINE_STAGES, PipelineConfig, segment_image
from .rendering import render_overlay
from .word_pipeline import PosLexicon, WordEmbeddingTable


def _resolve(path: str | None) -> Path | None:
    if path is None:
        return None
    candidate = Path(path)
    if candidate.exists():
        return candidate
    data_dir = os.environ.get("TAG_DATA_DIR")
    if data_dir and not candidate.is_absolute():
        under_data = Path(data_dir) / candidate
        if under_data.exists():
            return under_data
    return candidate


def _require(path: Path | None, what: str) -> Path:
    if path is None or not path.exists():
        raise InputError(f"{what}: not found at {path}")
    return path


def cmd_build_db(args) -> int:
    records = _require(_resolve(args.captions), "caption records")
    embeddings = _require(_resolve(args.embeddings), "caption embeddings")
    table = caption_index.load_text_table(records, embeddings)
    db = caption_index.build_database(table)
    index = caption_index.build_index(
        db, kind=args.index, lists=args.lists, seed=args.seed, probe_count=args.probes
    )
    caption_index.save_index(index, args.out)
    print(f"built {index.kind} index over {len(db)} captions -> {args.out}")
    return 0


def _feature_pairs(dino: Path, clip: Path) -> list[tuple[str, Path, Path]]:
    """Match DINO and CLIP feature tensors by stem, or pair two files."""
    if dino.is_file():
        if not clip.is_file():
            raise InputError(f"clip features: expected a file to pair with {dino}")
        return [(dino.name.removesuffix(".tens"), dino, clip)]
    pairs = []
    for dino_path in sorted(dino.glob("*.tens")):
        stem = dino_path.name.removesuffix(".tens")
        clip_path = clip / dino_path.name
        if not clip_path.exists():
            raise InputError(f"clip features: missing {clip_path} for {dino_path}")
        pairs.append((stem, dino_path, clip_path))
    if not pairs:
        raise InputError(f"dino features: no *.tens files under {dino}")
    return pairs


def _find_image(image_arg: Path | None, stem: str) -> Image.Image | None:
    if image_arg is None:
        return None
    if image_arg.is_file():
        return Image.open(image_arg)
    for ext in (".png", ".jpg", ".jpeg", ".bmp", ".webp"):
        candidate = image_arg / f"{stem}{ext}"
        if candidate.exists():
            return Image.open(candidate)
    return None


def _segment_one(stem: str, dino_path: Path, clip_path: Path, index, word_table,
                 lexicon, config: PipelineConfig, out_dir: Path,
                 image_arg: Path | None) -> dict:
    dino_map = load_feature_map(dino_path)
    clip_map = load_feature_map(clip_path)
    result = segment_image(dino_map, clip_map, index, word_table, lexicon, config)

    evaluator.save_label_map(
        result.label_map, out_dir / f"{stem}.labels.png", out_dir / f"{stem}.legend.json"
    )
    report = {
        "image": stem,
        "clusters": result.partition.n_segments,
        "segments": [
            {
                "id": seg.segment_id,
                "word": seg.word,
                "score": seg.score,
                "degenerate": seg.degenerate,
                "pixels": seg.pixel_count,
                "captions": seg.captions,
                "candidates": [[w, c] for w, c in seg.candidates],
            }
            for seg in result.segments
        ],
    }
    (out_dir / f"{stem}.report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    base = _find_image(image_arg, stem)
    overlay = render_overlay(result.label_map.grid, result.label_map.legend, image=base)
    overlay.save(out_dir / f"{stem}.overlay.png", format="PNG")
    if base is not None:
        base.close()
    words = {seg.word for seg in result.segments}
    return {"image": stem, "segments": result.partition.n_segments, "words": sorted(words)}


_SEGMENT_DEFAULTS = {
    "clusters": 15,
    "seed": 0,
    "kmeans_max_iters": 100,
    "kmeans_tol": 1e-4,
    "kmeans_workers": 1,
    "topn": 10,
    "freq_threshold": 2,
    "probes": None,
    "upsample": "bilinear",
    "cluster_space": "pixel",
    "count_per_caption": False,
    "pos_keep": "noun",
    "disable_filter": None,
    "jobs": 1,
    "lexicon": None,
    "image": None,
}


def _setting(args, config_file: dict, name: str):
    """Explicit flag > config file entry > built-in default."""
    value = getattr(args, name)
    if value is not None:
        return value
    if name in config_file:
        return config_file[name]
    return _SEGMENT_DEFAULTS[name]


def cmd_segment(args) -> int:
    dino = _require(_resolve(args.dino), "dino features")
    clip = _require(_resolve(args.clip), "clip features")
    db_dir = _require(_resolve(args.db), "caption database")
    table_dir = _require(_resolve(args.word_table), "word-embedding table")

    config_file = {}
    if args.config:
        config_path = _require(_resolve(args.config), "config file")
        config_file = json.loads(config_path.read_text(encoding="utf-8"))
        unknown = set(config_file) - set(_SEGMENT_DEFAULTS)
        if unknown:
            raise ParameterError(f"config file: unknown keys {sorted(unknown)}")

    index = caption_index.load_index(db_dir)
    word_table = WordEmbeddingTable.load(table_dir)
    lexicon_path = _setting(args, config_file, "lexicon")
    lexicon = PosLexicon.load(_require(_resolve(lexicon_path), "lexicon")) \
        if lexicon_path else PosLexicon.bundled()

    config = PipelineConfig(
        clusters=_setting(args, config_file, "clusters"),
        topn=_setting(args, config_file, "topn"),
        freq_threshold=_setting(args, config_file, "freq_threshold"),
        seed=_setting(args, config_file, "seed"),
        kmeans_max_iters=_setting(args, config_file, "kmeans_max_iters"),
        kmeans_tol=_setting(args, config_file, "kmeans_tol"),
        upsample_mode=_setting(args, config_file, "upsample"),
        cluster_space=_setting(args, config_file, "cluster_space"),
        probes=_setting(args, config_file, "probes"),
        count_per_caption=bool(_setting(args, config_file, "count_per_caption")),
        keep_tags=tuple(_setting(args, config_file, "pos_keep").split(",")),
        disabled_stages=frozenset(_setting(args, config_file, "disable_filter") or []),
        n_workers=_setting(args, config_file, "kmeans_workers"),
    ).validate()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_arg = _resolve(_setting(args, config_file, "image"))
    jobs = int(_setting(args, config_file, "jobs"))
    pairs = _feature_pairs(dino, clip)

    def run(pair):
        stem, dino_path, clip_path = pair
        return _segment_one(stem, dino_path, clip_path, index, word_table,
                            lexicon, config, out_dir, image_arg)

    if jobs > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(run, pairs))
    else:
        summaries = [run(pair) for pair in pairs]
    for summary in summaries:
        print(f"{summary['image']}: {summary['segments']} segments, "
              f"words: {', '.join(summary['words'])}")
    return 0


def cmd_eval(args) -> int:
    pred_dir = _require(_resolve(args.pred_dir), "prediction directory")
    gt_dir = _require(_resolve(args.gt_dir), "ground-truth directory")
    class_names = evaluator.load_class_list(_require(_resolve(args.classes), "class list"))

    table: WordEmbeddingTable | None = None
    for table_dir in args.sbert_table:
        loaded = WordEmbeddingTable.load(_require(_resolve(table_dir), "sentence table"))
        table = loaded if table is None else table.merged_with(loaded)
    if table is None:
        raise InputError("eval: at least one --sbert-table is required")

    label_files = sorted(pred_dir.glob("*.labels.png"))
    if not label_files:
        raise InputError(f"eval: no *.labels.png under {pred_dir}")
    pairs = []
    for labels_path in label_files:
        stem = labels_path.name.removesuffix(".labels.png")
        legend_path = pred_dir / f"{stem}.legend.json"
        gt_path = gt_dir / f"{stem}.png"
        if not legend_path.exists():
            raise InputError(f"eval: missing legend {legend_path}")
        if not gt_path.exists():
            raise InputError(f"eval: missing ground truth {gt_path}")
        pred = evaluator.load_label_map(labels_path, legend_path)
        reassigned = evaluator.reassign(pred, class_names, table)
        gt = evaluator.load_ground_truth(gt_path, class_names, ignore_id=args.ignore_id)
        pairs.append((reassigned, gt))

    report = evaluator.evaluate(
        pairs, class_names, sim_threshold=args.sim_threshold,
        keep_undefined_as_zero=args.keep_undefined_as_zero,
    )
    print(report.format_table())
    if args.report:
        Path(args.report).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        print(f"report written to {args.report}")
    return 0


def cmd_export_vocab(args) -> int:
    from .tensor_store import load_records
    from .word_pipeline import standardize, tokenize_and_remove

    records = load_records(_require(_resolve(args.captions), "caption records"))
    words = set()
    for record in records:
        words.update(standardize(tokenize_and_remove([record.text])))
    ordered = sorted(words)
    Path(args.out).write_text("\n".join(ordered) + "\n", encoding="utf-8")
    print(f"exported {len(ordered)} normalized words -> {args.out}")
    return 0


def cmd_inspect_index(args) -> int:
    db_dir = _require(_resolve(args.db), "caption database")
    index = caption_index.load_index(db_dir)
    db = index.db
    print(f"kind: {index.kind}")
    print(f"captions: {len(db)}")
    print(f"dim: {db.dim}")
    print(f"excluded rows: {int(db.excluded.sum())}")
    if index.kind == "ivf":
        sizes = np.array([len(p) for p in index.postings])
        print(f"lists: {index.n_lists}")
        print(f"probe_count: {index.probe_count}")
        print(f"list sizes: min={sizes.min()} median={int(np.median(sizes))} max={sizes.max()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tag",
        description="Open-vocabulary segmentation over precomputed dense features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_db = sub.add_parser("build-db", help="build a caption database and search index")
    p_db.add_argument("--captions", required=True, help="caption records (jsonl)")
    p_db.add_argument("--embeddings", required=True, help="caption embedding tensor")
    p_db.add_argument("--index", choices=("exact", "ivf"), default="exact")
    p_db.add_argument("--lists", type=int, default=None, help="inverted list count")
    p_db.add_argument("--probes", type=int, default=None, help="lists probed per query")
    p_db.add_argument("--seed", type=int, default=0)
    p_db.add_argument("--out", required=True)
    p_db.set_defaults(func=cmd_build_db)

    p_seg = sub.add_parser("segment", help="segment images from dense feature files")
    p_seg.add_argument("--dino", required=True, help="clustering features (.tens file or dir)")
    p_seg.add_argument("--clip", required=True, help="image-text features (.tens file or dir)")
    p_seg.add_argument("--db", required=True, help="caption database directory")
    p_seg.add_argument("--word-table", required=True, help="word-embedding table directory")
    p_seg.add_argument("--lexicon", default=None, help="part-of-speech lexicon path")
    p_seg.add_argument("--image", default=None, help="source image file or dir for overlays")
    p_seg.add_argument("--out", required=True)
    p_seg.add_argument("--config", default=None,
                       help="JSON config file; explicit flags take precedence")
    p_seg.add_argument("--clusters", type=int, default=None)
    p_seg.add_argument("--seed", type=int, default=None)
    p_seg.add_argument("--kmeans-max-iters", type=int, default=None)
    p_seg.add_argument("--kmeans-tol", type=float, default=None)
    p_seg.add_argument("--kmeans-workers", type=int, default=None)
    p_seg.add_argument("--topn", type=int, default=None)
    p_seg.add_argument("--freq-threshold", type=int, default=None)
    p_seg.add_argument("--probes", type=int, default=None)
    p_seg.add_argument("--upsample", choices=("bilinear", "nearest"), default=None)
    p_seg.add_argument("--cluster-space", choices=("pixel", "patch"), default=None)
    p_seg.add_argument("--count-per-caption", action="store_true", default=None,
                       help="count each word once per caption instead of per occurrence")
    p_seg.add_argument("--pos-keep", default=None,
                       help="comma-separated POS tags retained by the filter")
    p_seg.add_argument("--disable-filter", action="append", choices=PIPELINE_STAGES,
                       help="disable a pipeline stage (repeatable)")
    p_seg.add_argument("--jobs", type=int, default=None)
    p_seg.set_defaults(func=cmd_segment)

    p_eval = sub.add_parser("eval", help="score label maps against ground truth")
    p_eval.add_argument("--pred-dir", required=True)
    p_eval.add_argument("--gt-dir", required=True)
    p_eval.add_argument("--classes", required=True, help="class list file, one name per line")
    p_eval.add_argument("--sbert-table", action="append", required=True,
                        help="sentence-embedding table directory (repeatable)")
    p_eval.add_argument("--sim-threshold", type=float, default=-1.0)
    p_eval.add_argument("--keep-undefined-as-zero", action="store_true")
    p_eval.add_argument("--ignore-id", type=int, default=evaluator.IGNORE_ID)
    p_eval.add_argument("--report", default=None, help="write the report as JSON")
    p_eval.set_defaults(func=cmd_eval)

    p_inspect = sub.add_parser("inspect-index", help="print index statistics")
    p_inspect.add_argument("--db", required=True)
    p_inspect.set_defaults(func=cmd_inspect_index)

    p_vocab = sub.add_parser(
        "export-vocab", help="normalized unique words of a caption corpus"
    )
    p_vocab.add_argument("--captions", required=True, help="caption records (jsonl)")
    p_vocab.add_argument("--out", required=True, help="word list output path")
    p_vocab.set_defaults(func=cmd_export_vocab)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
