"""Stereo presentation formats for generated pairs."""

from __future__ import annotations

import numpy as np

FORMATS = ("anaglyph", "side_by_side", "pair")


def _check_views(left, right):
    left = np.asarray(left, dtype=np.float32)
    right = np.asarray(right, dtype=np.float32)
    if left.ndim != 3 or left.shape[2] != 3:
        raise ValueError(f"views must be (H, W, 3), got {left.shape}")
    if left.shape != right.shape:
        raise ValueError(f"view shapes differ: {left.shape} vs {right.shape}")
    return left, right


def anaglyph(left, right):
    """Red/cyan composite: R channel from the left view, G and B from
    the right."""
    left, right = _check_views(left, right)
    out = right.copy()
    out[:, :, 0] = left[:, :, 0]
    return out


def side_by_side(left, right, half_width=False):
    """Horizontal concatenation, left view first. ``half_width`` squeezes
    each view to half its width first (distribution-format framing), so
    the output keeps the original W."""
    left, right = _check_views(left, right)
    if half_width:
        from .imgio import bilinear_resize
        h, w = left.shape[:2]
        half = max(1, w // 2)
        left = bilinear_resize(left, (h, half))
        right = bilinear_resize(right, (h, half))
    return np.concatenate([left, right], axis=1)
