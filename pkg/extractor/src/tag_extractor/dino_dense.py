"""Dense patch features from a DINOv2 backbone."""

from __future__ import annotations

import torch


@torch.no_grad()
def extract_dino_dense(model, pixel_values: torch.Tensor) -> torch.Tensor:
    """Patch-token features, shape B x D x (H/P) x (W/P)."""
    patch = model.config.patch_size
    height, width = pixel_values.shape[-2:]
    if height % patch or width % patch:
        raise ValueError(f"input {height}x{width} not divisible by patch size {patch}")
    output = model(pixel_values=pixel_values)
    tokens = output.last_hidden_state[:, 1:, :]  # drop the class token
    grid_h, grid_w = height // patch, width // patch
    return tokens.transpose(1, 2).reshape(tokens.shape[0], tokens.shape[-1], grid_h, grid_w)
