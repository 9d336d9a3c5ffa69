"""Input validation helpers, shared across estimators and loaders."""

from __future__ import annotations

import numpy as np

from .errors import InputError, ParameterError


def as_float32(values, name: str = "values") -> np.ndarray:
    try:
        arr = np.asarray(values, dtype=np.float32)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{name}: cannot be interpreted as a float array") from exc
    return arr


def check_finite(arr: np.ndarray, name: str = "values") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name}: contains non-finite entries")
    return arr


def check_2d(arr: np.ndarray, name: str = "matrix") -> np.ndarray:
    if arr.ndim != 2:
        raise InputError(f"{name}: expected a 2-D array, got ndim={arr.ndim}")
    return arr


def check_positive_int(value, name: str) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise ParameterError(f"{name}: expected an integer, got {value!r}")
    if value < 1:
        raise ParameterError(f"{name}: must be >= 1, got {value}")
    return int(value)


def l2_normalize_rows(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalize rows to unit length.

    Returns (normalized, zero_mask); all-zero rows are left unchanged and
    flagged in the mask instead of being divided by zero.
    """
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    out = (matrix / safe[:, None].astype(np.float32)).astype(np.float32)
    return out, zero
