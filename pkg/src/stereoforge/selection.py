"""Differentiable disparity selection.

The network predicts, per output pixel, a probability distribution over a
discrete set of horizontal disparities (plus an optional "empty" channel
used for in-painting mass). The right view is rendered as the expectation
over disparity-shifted copies of the left view:

    out[i, j] = sum_d  probs[d, i, j] * left[i, j - d]

Because the render gathers (every output pixel reads a source pixel)
rather than scatters, no holes arise and the whole thing is differentiable
with respect to the probabilities, which is what lets the network train
directly on stereo pairs with no disparity supervision. The empty channel
contributes exactly zero to the sum.

Usable both inside the autodiff graph (``shifted_stack`` +
``selection_forward`` build graph nodes) and standalone on plain arrays
via one-hot volumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, _acc, _as_tensor, _node, softmax_channels


@dataclass(frozen=True)
class DisparityRange:
    """Inclusive integer disparity interval plus the optional empty channel.

    Channel layout of a matching volume: channel 0 is the empty channel
    when ``has_empty``; the remaining channels map to disparities
    ``d_min .. d_max`` in ascending order.
    """

    d_min: int = -15
    d_max: int = 16
    has_empty: bool = True

    def __post_init__(self):
        if not (self.d_min <= 0 <= self.d_max):
            raise ValueError(
                f"disparity range must contain zero: [{self.d_min}, {self.d_max}]")

    @property
    def n_shifts(self):
        return self.d_max - self.d_min + 1

    @property
    def channel_count(self):
        return self.n_shifts + (1 if self.has_empty else 0)

    @property
    def empty_channel(self):
        return 0 if self.has_empty else None

    @property
    def shift_offset(self):
        """Volume channel index of disparity ``d_min``."""
        return 1 if self.has_empty else 0

    def disparities(self):
        return np.arange(self.d_min, self.d_max + 1)

    def channel_of(self, d):
        if not self.d_min <= d <= self.d_max:
            raise ValueError(f"disparity {d} outside [{self.d_min}, {self.d_max}]")
        return int(d) - self.d_min + self.shift_offset

    def max_magnitude(self):
        return max(abs(self.d_min), abs(self.d_max))


class DisparityVolume:
    """Per-pixel probabilities over a DisparityRange's channels.

    Wraps a (N, C, H, W) probability tensor; every value must lie in [0, 1]
    and each pixel's channel sum must be 1 within 1e-5.
    """

    def __init__(self, probs, drange):
        probs = _as_tensor(probs)
        if probs.ndim != 4:
            raise ShapeError(f"volume must be (N, C, H, W), got {probs.shape}")
        if probs.shape[1] != drange.channel_count:
            raise ShapeError(
                f"volume has {probs.shape[1]} channels, range needs {drange.channel_count}")
        d = probs.data
        if d.min() < -1e-6 or d.max() > 1 + 1e-6:
            raise ValueError("volume probabilities must lie in [0, 1]")
        sums = d.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-5:
            raise ValueError("volume channel sums must be 1 within 1e-5")
        self.probs = probs
        self.range = drange

    @property
    def shape(self):
        return self.probs.shape

    @classmethod
    def from_disparity_map(cls, disp, drange):
        """One-hot volume from an integer disparity map (H, W) or (N, H, W)."""
        disp = np.asarray(disp)
        if disp.ndim == 2:
            disp = disp[None]
        if disp.ndim != 3:
            raise ShapeError(f"disparity map must be (H, W) or (N, H, W), got {disp.shape}")
        di = np.rint(disp).astype(np.int64)
        if di.min() < drange.d_min or di.max() > drange.d_max:
            raise ValueError(
                f"disparities [{di.min()}, {di.max()}] exceed range "
                f"[{drange.d_min}, {drange.d_max}]")
        n, h, w = di.shape
        probs = np.zeros((n, drange.channel_count, h, w), dtype=np.float32)
        chan = di - drange.d_min + drange.shift_offset
        nn, hh, ww = np.meshgrid(np.arange(n), np.arange(h), np.arange(w), indexing="ij")
        probs[nn, chan, hh, ww] = 1.0
        return cls(Tensor(probs), drange)


def _gather_columns(data, d):
    """Shift along the last axis by d with replicate borders: out[j] = in[j-d]."""
    w = data.shape[-1]
    cols = np.clip(np.arange(w) - d, 0, w - 1)
    return data[..., cols]


def shifted_stack(image, drange):
    """Stack of disparity-shifted copies of ``image``.

    Input (N, C, H, W) -> output (N, S, C, H, W) where S is the number of
    disparity channels (the empty channel has no shifted copy). Slice k
    holds image[..., j - d_k] with replicate borders, d_k ascending from
    d_min. Differentiable w.r.t. the image.
    """
    image = _as_tensor(image)
    if image.ndim != 4:
        raise ShapeError(f"shifted_stack expects (N, C, H, W), got {image.shape}")
    n, c, h, w = image.shape
    if w <= drange.max_magnitude():
        raise ShapeError(
            f"image width {w} cannot support disparities up to {drange.max_magnitude()}")
    ds = drange.disparities()
    out = np.empty((n, len(ds), c, h, w), dtype=np.float32)
    for k, d in enumerate(ds):
        out[:, k] = _gather_columns(image.data, int(d))

    def backward(g):
        gx = np.zeros_like(image.data)
        for k, d in enumerate(ds):
            gk = g[:, k]
            d = int(d)
            if d == 0:
                gx += gk
            elif d > 0:
                # source column j-d; clamped reads pile onto column 0
                gx[..., :w - d] += gk[..., d:]
                gx[..., 0] += gk[..., :d].sum(axis=-1)
            else:
                m = -d
                gx[..., m:] += gk[..., :w - m]
                gx[..., w - 1] += gk[..., w - m:].sum(axis=-1)
        _acc(image, gx)

    return _node(out, (image,), backward)


def selection_forward(stack, volume):
    """Expected image under the volume's disparity distribution.

    ``stack`` is (N, S, C, H, W) from ``shifted_stack``; the volume's
    non-empty channels weight the corresponding slices and the empty
    channel contributes zero. Gradients flow to the volume's probabilities
    and, when the stack requires grad, to the stack.
    """
    stack = _as_tensor(stack)
    probs = volume.probs
    if stack.ndim != 5:
        raise ShapeError(f"stack must be (N, S, C, H, W), got {stack.shape}")
    n, s, c, h, w = stack.shape
    if s != volume.range.n_shifts:
        raise ShapeError(
            f"stack has {s} slices but range has {volume.range.n_shifts} disparities")
    if probs.shape[0] != n or probs.shape[2:] != (h, w):
        raise ShapeError(f"volume shape {probs.shape} does not match stack {stack.shape}")
    off = volume.range.shift_offset
    p = probs.data[:, off:]
    out = np.einsum("nschw,nshw->nchw", stack.data, p)

    def backward(g):
        if probs.requires_grad:
            gp = np.zeros_like(probs.data)
            gp[:, off:] = np.einsum("nschw,nchw->nshw", stack.data, g)
            _acc(probs, gp)
        if stack.requires_grad:
            _acc(stack, p[:, :, None] * g[:, None])

    return _node(out, (stack, probs), backward)


def logits_to_volume(logits, drange):
    """Channel softmax over raw scores, wrapped as a DisparityVolume."""
    logits = _as_tensor(logits)
    if logits.ndim != 4 or logits.shape[1] != drange.channel_count:
        raise ShapeError(
            f"logits must be (N, {drange.channel_count}, H, W), got {logits.shape}")
    return DisparityVolume(softmax_channels(logits), drange)


def expected_disparity(volume):
    """Per-pixel expected disparity with the empty mass renormalized out.

    Returns a constant (no-grad) tensor of shape (N, 1, H, W); pixels whose
    whole mass sits on the empty channel map to 0.
    """
    drange = volume.range
    p = volume.probs.data[:, drange.shift_offset:]
    d = drange.disparities().astype(np.float32)
    num = np.einsum("s,nshw->nhw", d, p)
    den = p.sum(axis=1)
    out = np.where(den > 1e-12, num / np.maximum(den, 1e-12), 0.0).astype(np.float32)
    return Tensor(out[:, None])
