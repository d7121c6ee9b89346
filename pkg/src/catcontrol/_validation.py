"""Input checks shared by the estimator wrapper and the command line."""

from __future__ import annotations

import numpy as np


def check_tasks(X, name: str = "X") -> np.ndarray:
    """Return tasks as a finite float array of shape (n, 2) with columns (alpha, phi)."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1 and arr.size == 2:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_positive(value, name: str) -> float:
    v = float(value)
    if not (np.isfinite(v) and v > 0):
        raise ValueError(f"{name} must be positive, got {value!r}")
    return v


def check_seed(seed) -> int:
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    return int(seed)


def check_coefficients_batch(C, name: str = "coefficients") -> np.ndarray:
    """Return a (n, 4, 9) finite array; also accepts flat rows of 36 numbers."""
    arr = np.asarray(C, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 36:
        arr = arr.reshape(-1, 4, 9)
    if arr.ndim == 2 and arr.shape == (4, 9):
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1:] != (4, 9):
        raise ValueError(f"{name} must have shape (n, 4, 9) or (n, 36), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr
