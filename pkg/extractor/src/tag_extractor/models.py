"""Checkpoint loading; imports are kept lazy so offline tests can inject
tiny locally-constructed models instead."""

from __future__ import annotations

import torch

DEFAULT_DINO = "facebook/dinov2-large"
DEFAULT_CLIP = "openai/clip-vit-large-patch14"
DEFAULT_SBERT = "sentence-transformers/all-mpnet-base-v2"

DINO_SOURCE = "dinov2-vitl14"
CLIP_SOURCE = "clip-vitl14-value"


def load_clip(model_id: str = DEFAULT_CLIP):
    from transformers import CLIPModel, CLIPTokenizerFast

    model = CLIPModel.from_pretrained(model_id)
    model.eval()
    tokenizer = CLIPTokenizerFast.from_pretrained(model_id)
    return model, tokenizer


def load_dino(model_id: str = DEFAULT_DINO):
    from transformers import Dinov2Model

    model = Dinov2Model.from_pretrained(model_id)
    model.eval()
    return model


def load_sbert(model_id: str = DEFAULT_SBERT):
    from sentence_transformers import SentenceTransformer

    return SentenceTransformer(model_id)


def deterministic_mode(seed: int = 0) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
