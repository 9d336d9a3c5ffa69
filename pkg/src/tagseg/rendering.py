"""Deterministic colorization and overlay rendering for label maps."""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .errors import InputError

_SWATCH = 10
_PAD = 4


def color_for_id(label_id: int) -> tuple[int, int, int]:
    """Fixed palette keyed by label id (bit-interleaved channel pattern)."""
    value = int(label_id) + 1  # avoid pure black for id 0
    r = g = b = 0
    for shift in range(8):
        r |= ((value >> 0) & 1) << (7 - shift)
        g |= ((value >> 1) & 1) << (7 - shift)
        b |= ((value >> 2) & 1) << (7 - shift)
        value >>= 3
    return r, g, b


def colorize(grid: np.ndarray) -> np.ndarray:
    """Map an H x W id grid to an H x W x 3 uint8 color image."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise InputError("colorize: grid must be H x W")
    ids = np.unique(grid)
    lut = np.zeros((int(ids.max()) + 1 if ids.size else 1, 3), dtype=np.uint8)
    for i in ids:
        lut[int(i)] = color_for_id(int(i))
    return lut[grid]


def render_overlay(grid: np.ndarray, legend: dict[int, str],
                   image: Image.Image | None = None, alpha: float = 0.5) -> Image.Image:
    """Blend the colorized label map over the image and burn a text legend.

    Without a base image the colorized map itself is annotated.
    """
    colors = Image.fromarray(colorize(grid), mode="RGB")
    if image is not None:
        base = image.convert("RGB")
        if base.size != colors.size:
            base = base.resize(colors.size, Image.BILINEAR)
        canvas = Image.blend(base, colors, alpha)
    else:
        canvas = colors

    draw = ImageDraw.Draw(canvas)
    font = ImageFont.load_default()
    entries = [(i, legend[i]) for i in sorted(legend) if i in legend]
    present = set(int(v) for v in np.unique(grid))
    entries = [(i, w) for i, w in entries if i in present]
    if entries:
        line_h = _SWATCH + _PAD
        box_w = max(draw.textlength(w, font=font) for _, w in entries) + _SWATCH + 3 * _PAD
        box_h = line_h * len(entries) + _PAD
        draw.rectangle([0, 0, box_w, box_h], fill=(255, 255, 255))
        for row, (label_id, word) in enumerate(entries):
            y = _PAD + row * line_h
            draw.rectangle(
                [_PAD, y, _PAD + _SWATCH, y + _SWATCH], fill=color_for_id(label_id)
            )
            draw.text((2 * _PAD + _SWATCH, y - 1), word, fill=(0, 0, 0), font=font)
    return canvas
