"""Image decoding and normalization for the vision towers."""

from __future__ import annotations

import logging

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

logger = logging.getLogger(__name__)

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

DEFAULT_RESOLUTION = 448


def load_image(path) -> Image.Image | None:
    """Decode an image; undecodable files are skipped with a log entry."""
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (UnidentifiedImageError, OSError) as exc:
        logger.warning("skipping undecodable image %s: %s", path, exc)
        return None


def to_model_input(image: Image.Image, resolution: int, mean, std) -> torch.Tensor:
    """Resize to resolution x resolution and normalize; returns 1x3xRxR."""
    resized = image.resize((resolution, resolution), Image.BICUBIC)
    arr = np.asarray(resized, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    tensor = torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)
    return tensor.contiguous()
