"""Input validation helpers shared by the estimator layer."""

from __future__ import annotations

import numpy as np


def check_image(x, name="image"):
    """Validate one (H, W, 3) float image in [0, 1]; returns float32."""
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must be (H, W, 3), got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains NaN or Inf")
    if arr.min() < -1e-6 or arr.max() > 1 + 1e-6:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return np.clip(arr, 0.0, 1.0)


def check_image_batch(X, name="X"):
    """Validate a batch of images given as an (N, H, W, 3) array or a
    sequence of (H, W, 3) arrays with equal dims; returns a list."""
    if isinstance(X, np.ndarray) and X.ndim == 4:
        items = list(X)
    else:
        items = list(X)
    if not items:
        raise ValueError(f"{name} must contain at least one image")
    out = [check_image(im, f"{name}[{i}]") for i, im in enumerate(items)]
    first = out[0].shape
    for i, im in enumerate(out):
        if im.shape != first:
            raise ValueError(
                f"{name}[{i}] has shape {im.shape}, expected {first} like {name}[0]")
    return out


def check_pairs(X, y, xname="X", yname="y"):
    """Validate matched left/right batches of equal length and dims."""
    lefts = check_image_batch(X, xname)
    rights = check_image_batch(y, yname)
    if len(lefts) != len(rights):
        raise ValueError(
            f"{xname} and {yname} lengths differ: {len(lefts)} vs {len(rights)}")
    if lefts[0].shape != rights[0].shape:
        raise ValueError(
            f"{xname} and {yname} image dims differ: "
            f"{lefts[0].shape} vs {rights[0].shape}")
    return lefts, rights
