"""Input checks shared by the estimator and the training entry points."""
from __future__ import annotations

import numpy as np


def check_images(X, name: str = "X") -> np.ndarray:
    """Coerce to a finite float64 batch of shape ``(n, 1, H, W)``.

    Accepts a single ``(H, W)`` image, a stack ``(n, H, W)`` or an already
    channelled ``(n, 1, H, W)`` batch. H and W must be even.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[:, None]
    elif arr.ndim != 4 or arr.shape[1] != 1:
        raise ValueError(f"{name}: expected (H, W), (n, H, W) or (n, 1, H, W), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name}: empty batch")
    if arr.shape[2] % 2 or arr.shape[3] % 2:
        raise ValueError(f"{name}: height and width must be even, got {arr.shape[2:]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains NaN or Inf")
    return arr


def check_pair(X, y, binary_target: bool = False):
    X = check_images(X, "X")
    y = check_images(y, "y")
    if X.shape != y.shape:
        raise ValueError(f"X and y shapes differ: {X.shape} vs {y.shape}")
    if binary_target and np.any((y != 0) & (y != 1)):
        raise ValueError("y: segmentation targets must be binary")
    return X, y
