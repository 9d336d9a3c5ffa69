"""Per-pixel feature maps and the vector math shared by all stages.

Patch-grid features are upsampled to pixel resolution with bilinear
interpolation under a half-pixel patch-center alignment; pixels outside
the outermost patch centers replicate the border patch (no extrapolation).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateVectorWarning, InputError
from .tensor_store import load_tensor, save_tensor
from .validation import as_float32, check_finite

UPSAMPLE_MODES = ("bilinear", "nearest")


@dataclass(frozen=True)
class DenseFeatureMap:
    """D x h x w patch-grid features with image geometry metadata."""

    values: np.ndarray
    image_size: tuple[int, int]  # (H, W) pixels
    patch_size: int
    source: str = ""

    def __post_init__(self):
        values = as_float32(self.values, "feature map")
        if values.ndim != 3:
            raise InputError(f"feature map: expected D x h x w, got ndim={values.ndim}")
        check_finite(values, "feature map")
        object.__setattr__(self, "values", values)
        height, width = self.image_size
        patch = self.patch_size
        if patch < 1 or height < 1 or width < 1:
            raise InputError(
                f"feature map: bad geometry image_size={self.image_size} patch_size={patch}"
            )
        grid_h, grid_w = values.shape[1], values.shape[2]
        if grid_h != math.ceil(height / patch) or grid_w != math.ceil(width / patch):
            raise InputError(
                f"feature map: grid {grid_h}x{grid_w} inconsistent with "
                f"image {height}x{width} at patch size {patch}"
            )

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def grid_size(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]


@dataclass(frozen=True)
class PixelFeatureMap:
    """D x H x W per-pixel features."""

    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        values = as_float32(self.values, "pixel features")
        if values.ndim != 3:
            raise InputError(f"pixel features: expected D x H x W, got ndim={values.ndim}")
        check_finite(values, "pixel features")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def image_size(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]


def _axis_interp(n_out: int, patch: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Low index, high index, and high-side weight for one axis."""
    coords = (np.arange(n_out, dtype=np.float64) + 0.5) / patch - 0.5
    coords = np.clip(coords, 0.0, n_in - 1.0)
    if n_in == 1:
        zeros = np.zeros(n_out, dtype=np.int64)
        return zeros, zeros, np.zeros(n_out, dtype=np.float64)
    low = np.minimum(np.floor(coords).astype(np.int64), n_in - 2)
    frac = coords - low
    return low, low + 1, frac


def upsample(feature_map: DenseFeatureMap, mode: str = "bilinear") -> PixelFeatureMap:
    """Interpolate a patch grid to per-pixel resolution.

    A pixel whose center coincides with a patch center receives exactly
    that patch's feature; interpolation acts on each channel independently.
    """
    if mode not in UPSAMPLE_MODES:
        raise InputError(f"upsample: unknown mode {mode!r}, expected one of {UPSAMPLE_MODES}")
    height, width = feature_map.image_size
    patch = feature_map.patch_size
    if height < patch or width < patch:
        raise InputError(
            f"upsample: invalid geometry, image {height}x{width} smaller than patch {patch}"
        )
    values = feature_map.values
    grid_h, grid_w = feature_map.grid_size

    if mode == "nearest":
        rows = np.minimum(np.arange(height) // patch, grid_h - 1)
        cols = np.minimum(np.arange(width) // patch, grid_w - 1)
        out = values[:, rows[:, None], cols[None, :]]
        return PixelFeatureMap(values=out, source=feature_map.source)

    row_lo, row_hi, row_w = _axis_interp(height, patch, grid_h)
    col_lo, col_hi, col_w = _axis_interp(width, patch, grid_w)
    out = np.empty((values.shape[0], height, width), dtype=np.float32)
    # separable interpolation, chunked over channels to bound peak memory
    for start in range(0, values.shape[0], 64):
        block = values[start : start + 64].astype(np.float64)
        rows = (
            block[:, row_lo, :] * (1.0 - row_w)[None, :, None]
            + block[:, row_hi, :] * row_w[None, :, None]
        )
        out[start : start + 64] = (
            rows[:, :, col_lo] * (1.0 - col_w)[None, None, :]
            + rows[:, :, col_hi] * col_w[None, None, :]
        )
    return PixelFeatureMap(values=out, source=feature_map.source)


def cosine(a, b) -> float:
    """Cosine similarity in [-1, 1]; all-zero input yields 0 with a warning."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InputError(f"cosine: length mismatch {a.shape[0]} != {b.shape[0]}")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        warnings.warn("cosine of an all-zero vector", DegenerateVectorWarning, stacklevel=2)
        return 0.0
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def l2_normalize(vector) -> np.ndarray:
    """Scale to unit length; all-zero input passes through with a warning."""
    vector = np.asarray(vector, dtype=np.float32)
    norm = float(np.linalg.norm(vector.astype(np.float64)))
    if norm == 0.0:
        warnings.warn("normalizing an all-zero vector", DegenerateVectorWarning, stacklevel=2)
        return vector.copy()
    return (vector / np.float32(norm)).astype(np.float32)


def _sidecar_path(tensor_path) -> Path:
    return Path(tensor_path).with_suffix(".json")


def save_feature_map(feature_map: DenseFeatureMap, tensor_path) -> None:
    """Persist the patch grid as a tensor file plus a geometry sidecar."""
    save_tensor(feature_map.values, tensor_path)
    meta = {
        "image_size": list(feature_map.image_size),
        "patch_size": feature_map.patch_size,
        "source": feature_map.source,
    }
    _sidecar_path(tensor_path).write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")


def load_feature_map(tensor_path) -> DenseFeatureMap:
    sidecar = _sidecar_path(tensor_path)
    if not sidecar.exists():
        raise InputError(f"feature map: missing geometry sidecar {sidecar}")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    values = load_tensor(tensor_path)
    if values.ndim != 3:
        raise InputError(f"feature map: expected a 3-D tensor, got ndim={values.ndim}")
    return DenseFeatureMap(
        values=values,
        image_size=(int(meta["image_size"][0]), int(meta["image_size"][1])),
        patch_size=int(meta["patch_size"]),
        source=str(meta.get("source", "")),
    )
