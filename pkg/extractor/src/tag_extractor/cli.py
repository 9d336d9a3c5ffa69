"""tag-extract: batch offline embedding extraction.

Subcommands emit only the engine's wire formats plus a manifest with a
content hash per artifact. GPU use is optional; everything runs on CPU.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import models
from .clip_dense import HEADS, extract_clip_dense
from .dino_dense import extract_dino_dense
from .manifest import Manifest
from .preprocess import (
    CLIP_MEAN,
    CLIP_STD,
    DEFAULT_RESOLUTION,
    IMAGENET_MEAN,
    IMAGENET_STD,
    load_image,
    to_model_input,
)
from .tensor_io import read_records, save_feature_sidecar, save_tensor
from .text_embed import ClipTextEncoder, SentenceEncoder, export_text_table, read_word_list

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


def _image_paths(images_dir: Path) -> list[Path]:
    paths = [p for p in sorted(images_dir.iterdir())
             if p.suffix.lower() in IMAGE_EXTENSIONS]
    if not paths:
        raise SystemExit(f"no images under {images_dir}")
    return paths


def _extract_images(args, model, extract, mean, std, source: str) -> int:
    models.deterministic_mode()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out_dir)
    written = 0
    for path in _image_paths(Path(args.images)):
        image = load_image(path)
        if image is None:
            continue
        pixel_values = to_model_input(image, args.resolution, mean, std)
        features = extract(model, pixel_values)[0].cpu().numpy()
        tensor_path = out_dir / f"{path.stem}.tens"
        save_tensor(features, tensor_path)
        save_feature_sidecar(
            tensor_path,
            image_size=(args.resolution, args.resolution),
            patch_size=args.resolution // features.shape[-1],
            source=source,
        )
        manifest.add(tensor_path, kind=source)
        manifest.add(tensor_path.with_suffix(".json"), kind="sidecar")
        written += 1
        logger.info("wrote %s (%s)", tensor_path, "x".join(map(str, features.shape)))
    manifest.write()
    print(f"extracted {written} feature maps -> {out_dir}")
    return 0


def cmd_dino(args) -> int:
    model = models.load_dino(args.model)
    return _extract_images(
        args, model, extract_dino_dense, IMAGENET_MEAN, IMAGENET_STD, models.DINO_SOURCE
    )


def cmd_clip(args) -> int:
    model, _ = models.load_clip(args.model)
    source = models.CLIP_SOURCE if args.head == "value" else "clip-vitl14-gem"

    def extract(m, pixels):
        return extract_clip_dense(m, pixels, head=args.head)

    return _extract_images(args, model, extract, CLIP_MEAN, CLIP_STD, source)


def _export_with_manifest(texts, encoder, out_dir, source) -> int:
    out = export_text_table(texts, encoder, out_dir, source=source)
    manifest = Manifest(out)
    manifest.add(out / "records.jsonl", kind="records")
    manifest.add(out / "embeddings.tens", kind="embeddings")
    manifest.write()
    print(f"embedded {len(texts)} texts -> {out}")
    return 0


def cmd_captions(args) -> int:
    models.deterministic_mode()
    model, tokenizer = models.load_clip(args.model)
    encoder = ClipTextEncoder(model, tokenizer, batch_size=args.batch_size)
    texts = read_records(args.records)
    return _export_with_manifest(texts, encoder, args.out, source="clip-text")


def cmd_vocab(args) -> int:
    models.deterministic_mode()
    model, tokenizer = models.load_clip(args.model)
    encoder = ClipTextEncoder(model, tokenizer, batch_size=args.batch_size)
    words = read_word_list(args.words)
    # records keep the bare word as the lookup key even when a prompt
    # template is used for embedding
    prompts = [args.template.format(w) for w in words]
    out = export_text_table(prompts, encoder, args.out, source="clip-text", keys=words)
    manifest = Manifest(out)
    manifest.add(out / "records.jsonl", kind="records")
    manifest.add(out / "embeddings.tens", kind="embeddings")
    manifest.write()
    print(f"embedded {len(words)} words -> {out}")
    return 0


def cmd_sbert(args) -> int:
    models.deterministic_mode()
    encoder = SentenceEncoder(models.load_sbert(args.model), batch_size=args.batch_size)
    texts = []
    for source in args.words:
        texts.extend(read_word_list(source))
    ordered = list(dict.fromkeys(texts))  # dedupe, keep first occurrence
    return _export_with_manifest(ordered, encoder, args.out, source="sbert")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tag-extract", description="offline embedding extraction"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_dino = sub.add_parser("dino", help="dense DINOv2 patch features")
    p_dino.add_argument("--images", required=True)
    p_dino.add_argument("--out", required=True)
    p_dino.add_argument("--model", default=models.DEFAULT_DINO)
    p_dino.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION)
    p_dino.set_defaults(func=cmd_dino)

    p_clip = sub.add_parser("clip", help="dense CLIP value-path patch features")
    p_clip.add_argument("--images", required=True)
    p_clip.add_argument("--out", required=True)
    p_clip.add_argument("--model", default=models.DEFAULT_CLIP)
    p_clip.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION)
    p_clip.add_argument("--head", choices=HEADS, default="value")
    p_clip.set_defaults(func=cmd_clip)

    p_cap = sub.add_parser("captions", help="CLIP text embeddings for caption records")
    p_cap.add_argument("--records", required=True)
    p_cap.add_argument("--out", required=True)
    p_cap.add_argument("--model", default=models.DEFAULT_CLIP)
    p_cap.add_argument("--batch-size", type=int, default=64)
    p_cap.set_defaults(func=cmd_captions)

    p_vocab = sub.add_parser("vocab", help="CLIP text embeddings for a word list")
    p_vocab.add_argument("--words", required=True, help="one word per line")
    p_vocab.add_argument("--out", required=True)
    p_vocab.add_argument("--model", default=models.DEFAULT_CLIP)
    p_vocab.add_argument("--batch-size", type=int, default=64)
    p_vocab.add_argument("--template", default="{}",
                         help="prompt template around each word, e.g. 'a photo of a {}'")
    p_vocab.set_defaults(func=cmd_vocab)

    p_sbert = sub.add_parser("sbert", help="sentence embeddings for words/class names")
    p_sbert.add_argument("--words", action="append", required=True,
                         help="word or class-name list file (repeatable)")
    p_sbert.add_argument("--out", required=True)
    p_sbert.add_argument("--model", default=models.DEFAULT_SBERT)
    p_sbert.add_argument("--batch-size", type=int, default=64)
    p_sbert.set_defaults(func=cmd_sbert)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
