"""Shared input-validation helpers and error types."""

from __future__ import annotations

import numpy as np


class ValidationError(ValueError):
    """Input violates a documented contract (bad shape, path, config, range)."""


class ComputationError(RuntimeError):
    """Computation cannot proceed (degenerate data, divergence, no shared layers)."""


def check_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_matrix(x, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {arr.shape}")
    return check_finite(arr, name)


def check_tensor4(x, name: str = "tensor") -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 4:
        raise ValidationError(f"{name} must be 4-D [n, h, w, d], got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValidationError(f"{name} has an empty axis: shape {arr.shape}")
    return check_finite(arr, name)


def check_labels(y, n: int | None = None) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValidationError(f"labels must be 1-D, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == arr.astype(np.int64)):
            raise ValidationError("labels must be integers")
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ValidationError("labels must be non-negative class indices")
    if n is not None and arr.shape[0] != n:
        raise ValidationError(f"expected {n} labels, got {arr.shape[0]}")
    return arr
