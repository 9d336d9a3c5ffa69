"""Dense patch features from a CLIP vision tower, in the joint space.

The default head replaces the final attention's spatial mixing with the
identity, so each patch contributes its own value projection: the block
output at patch i becomes out_proj(v_i), with residual and MLP kept.
Every token then passes through the final layer norm and the visual
projection, landing patch features in the image-text embedding space.

The alternative "gem" head replaces the final attention weights with an
ensemble of normalized self-self attentions over q, k, and v.
"""

from __future__ import annotations

import math

import torch

HEADS = ("value", "gem")


def _split_heads(tensor: torch.Tensor, n_heads: int) -> torch.Tensor:
    batch, tokens, dim = tensor.shape
    return tensor.view(batch, tokens, n_heads, dim // n_heads).transpose(1, 2)


def _merge_heads(tensor: torch.Tensor) -> torch.Tensor:
    batch, n_heads, tokens, head_dim = tensor.shape
    return tensor.transpose(1, 2).reshape(batch, tokens, n_heads * head_dim)


def _self_self_attention(z: torch.Tensor, v: torch.Tensor, n_heads: int) -> torch.Tensor:
    """softmax(scale * ẑ ẑᵀ) v with per-head L2-normalized keys/queries."""
    zh = _split_heads(z, n_heads)
    vh = _split_heads(v, n_heads)
    zh = torch.nn.functional.normalize(zh, dim=-1)
    scale = 1.0 / math.sqrt(zh.shape[-1])
    weights = torch.softmax(zh @ zh.transpose(-2, -1) * scale, dim=-1)
    return _merge_heads(weights @ vh)


def _last_block_value_path(layer, hidden: torch.Tensor, head: str) -> torch.Tensor:
    attn = layer.self_attn
    normed = layer.layer_norm1(hidden)
    v = attn.v_proj(normed)
    if head == "value":
        mixed = v
    elif head == "gem":
        q = attn.q_proj(normed)
        k = attn.k_proj(normed)
        mixed = (
            _self_self_attention(q, v, attn.num_heads)
            + _self_self_attention(k, v, attn.num_heads)
            + _self_self_attention(v, v, attn.num_heads)
        ) / 3.0
    else:
        raise ValueError(f"unknown head {head!r}, expected one of {HEADS}")
    hidden = hidden + attn.out_proj(mixed)
    hidden = hidden + layer.mlp(layer.layer_norm2(hidden))
    return hidden


@torch.no_grad()
def extract_clip_dense(model, pixel_values: torch.Tensor, head: str = "value") -> torch.Tensor:
    """Per-patch joint-space features, shape B x D x (H/P) x (W/P).

    `model` is a transformers CLIPModel; the input resolution must be a
    multiple of the vision patch size.
    """
    vision = model.vision_model
    patch = model.config.vision_config.patch_size
    height, width = pixel_values.shape[-2:]
    if height % patch or width % patch:
        raise ValueError(f"input {height}x{width} not divisible by patch size {patch}")

    hidden = vision.embeddings(pixel_values)
    hidden = vision.pre_layrnorm(hidden)
    layers = vision.encoder.layers
    for layer in layers[:-1]:
        out = layer(hidden, attention_mask=None)
        hidden = out[0] if isinstance(out, tuple) else out
    hidden = _last_block_value_path(layers[-1], hidden, head)

    hidden = vision.post_layernorm(hidden)
    projected = model.visual_projection(hidden)
    patches = projected[:, 1:, :]  # drop the class token
    grid_h, grid_w = height // patch, width // patch
    return patches.transpose(1, 2).reshape(
        patches.shape[0], projected.shape[-1], grid_h, grid_w
    )
