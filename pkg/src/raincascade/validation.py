"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .tensorcore import ContractViolation


def check_image_batch(X, *, name: str = "X", dtype=np.float32, value_range=None) -> np.ndarray:
    """Coerce ``X`` to a finite (n, 3, H, W) array.

    A single (3, H, W) image is promoted to a batch of one.
    """
    arr = np.asarray(X, dtype=dtype)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n_images, 3, height, width); got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} contains no images")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    if value_range is not None:
        lo, hi = value_range
        if arr.min() < lo or arr.max() > hi:
            raise ValueError(f"{name} values must lie in [{lo}, {hi}]")
    return arr


def check_paired(X, y, *, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    X = check_image_batch(X, name="X", dtype=dtype)
    y = check_image_batch(y, name="y", dtype=dtype)
    if X.shape != y.shape:
        raise ValueError(f"X and y shapes differ: {X.shape} vs {y.shape}")
    return X, y


def check_divisible(extent: int, factors, what: str = "patch_size") -> None:
    for r in factors:
        if extent % r:
            raise ContractViolation(f"{what} {extent} not divisible by shuffle factor {r}")
