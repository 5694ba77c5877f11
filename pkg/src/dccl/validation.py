"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_float_matrix",
    "as_label_vector",
    "check_finite",
    "check_row_aligned",
    "check_unit_rows",
]


def check_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")


def as_float_matrix(x, name: str, dtype=np.float64) -> np.ndarray:
    """Coerce to a 2-D float matrix with at least one row/column, all finite."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be non-empty, got shape {arr.shape}")
    check_finite(arr, name)
    return arr


def as_label_vector(y, name: str, length: int | None = None) -> np.ndarray:
    arr = np.asarray(y, dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {length}")
    return arr


def check_row_aligned(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str) -> None:
    if a.shape[0] != b.shape[0]:
        raise ValueError(
            f"{name_a} ({a.shape[0]} rows) is not aligned with {name_b} ({b.shape[0]} rows)"
        )


def check_unit_rows(x: np.ndarray, name: str, tol: float = 1e-4) -> None:
    norms = np.linalg.norm(x, axis=1)
    if not np.allclose(norms, 1.0, atol=tol):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ValueError(f"{name} rows must be unit-norm (max deviation {worst:.3g})")
