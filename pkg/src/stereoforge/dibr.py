"""Classical depth-image-based rendering and stereo baselines.

Everything here is plain numpy over (H, W) maps and (H, W, C) images in
[0, 1]: converting depth to horizontal disparity for a rectified camera
pair, forward-scatter rendering of the novel view with occlusion handling
and hole extraction, 1-D background-biased hole filling, and two
non-learned disparity estimators (a single global shift and SAD block
matching) used as baselines and for the no-direct-training ablation path.

Disparity conventions: ``disparity_render`` takes a source-indexed map
(source pixel j lands at column j + D[i, j]), while
``block_match_disparity`` returns a target-indexed map (target pixel j
sources from column j - D[i, j]) so it aligns with the selection layer's
gather semantics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CameraModel:
    """Rectified stereo geometry: baseline separation and focus distance.

    Points at the focus distance have zero disparity; nearer points shift
    negative, farther points shift positive, approaching the baseline.
    """

    baseline: float
    focus: float

    def __post_init__(self):
        if not (np.isfinite(self.baseline) and self.baseline > 0):
            raise ValueError(f"baseline must be finite and > 0, got {self.baseline}")
        if not (np.isfinite(self.focus) and self.focus > 0):
            raise ValueError(f"focus must be finite and > 0, got {self.focus}")


def _check_map(m, name):
    m = np.asarray(m, dtype=np.float32)
    if m.ndim != 2:
        raise ValueError(f"{name} must be a 2-D (H, W) array, got shape {m.shape}")
    if m.size and not np.isfinite(m).all():
        raise ValueError(f"{name} contains NaN or Inf")
    return m


def depth_to_disparity(depth, camera):
    """Disparity D = B * (Z - f) / Z for depth Z, baseline B, focus f."""
    z = _check_map(depth, "depth")
    if z.size and z.min() <= 0:
        raise ValueError("depth values must be > 0")
    b, f = np.float32(camera.baseline), np.float32(camera.focus)
    return (b * (z - f) / z).astype(np.float32)


def _round_half_away(x):
    return np.trunc(x + np.copysign(np.float32(0.5), x))


def disparity_render(image, disparity, depth=None):
    """Forward-scatter the source image along per-pixel disparities.

    Source pixel (i, j) lands at column j + round(D[i, j]) (half away from
    zero). Collisions resolve to the larger algebraic disparity, or to the
    smaller depth when ``depth`` is given; among equal priorities the
    larger source column wins (deterministic). Returns (rendered, holes)
    where holes marks target pixels no source reached. Works for any
    channel count, so auxiliary maps can be warped alongside the image by
    stacking them as channels.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3:
        raise ValueError(f"image must be (H, W) or (H, W, C), got {img.shape}")
    h, w = img.shape[:2]
    disp = _check_map(disparity, "disparity")
    if disp.shape != (h, w):
        raise ValueError(f"disparity shape {disp.shape} does not match image {(h, w)}")
    if depth is not None:
        depth = _check_map(depth, "depth")
        if depth.shape != (h, w):
            raise ValueError(f"depth shape {depth.shape} does not match image {(h, w)}")

    src_col = np.broadcast_to(np.arange(w), (h, w))
    tgt_col = src_col + _round_half_away(disp).astype(np.int64)
    rows = np.broadcast_to(np.arange(h)[:, None], (h, w))
    ok = (tgt_col >= 0) & (tgt_col < w)

    flat_tgt = (rows[ok] * w + tgt_col[ok]).astype(np.int64)
    flat_src = (rows[ok] * w + src_col[ok]).astype(np.int64)
    prio = (disp[ok] if depth is None else -depth[ok]).astype(np.float64)

    # winner per target: sort by (target, priority, source col) and keep the
    # last entry of each target run
    order = np.lexsort((flat_src, prio, flat_tgt))
    t_sorted = flat_tgt[order]
    if t_sorted.size:
        last = np.ones(t_sorted.size, dtype=bool)
        last[:-1] = t_sorted[1:] != t_sorted[:-1]
        winners = order[last]
    else:
        winners = order

    out = np.zeros_like(img).reshape(h * w, img.shape[2])
    holes = np.ones(h * w, dtype=bool)
    out[flat_tgt[winners]] = img.reshape(h * w, -1)[flat_src[winners]]
    holes[flat_tgt[winners]] = False
    out = out.reshape(img.shape)
    if np.asarray(image).ndim == 2:
        out = out[..., 0]
    return out, holes.reshape(h, w)


def fill_holes(image, mask, disparity=None):
    """Fill masked pixels from row neighbors, biased toward the background.

    Without a disparity map each hole copies its nearest non-hole pixel in
    the row (ties to the left). With one, each hole run copies the run
    boundary neighbor whose |disparity| is smaller (the background side),
    falling back to whichever boundary exists. Rows that are entirely
    holes copy the nearest filled row (ties upward); a fully masked image
    is an error.
    """
    img = np.array(image, dtype=np.float32, copy=True)
    mask = np.asarray(mask, dtype=bool)
    flat_channels = img.ndim == 2
    if flat_channels:
        img = img[..., None]
    h, w = img.shape[:2]
    if mask.shape != (h, w):
        raise ValueError(f"mask shape {mask.shape} does not match image {(h, w)}")
    if mask.all():
        raise ValueError("cannot fill an entirely masked image")
    if disparity is not None:
        disparity = _check_map(disparity, "disparity")
        if disparity.shape != (h, w):
            raise ValueError("disparity shape does not match image")

    cols = np.arange(w)
    whole_rows = []
    for i in range(h):
        m = mask[i]
        if not m.any():
            continue
        if m.all():
            whole_rows.append(i)
            continue
        if disparity is None:
            valid = ~m
            left = np.where(valid, cols, -1)
            np.maximum.accumulate(left, out=left)
            right = np.where(valid, cols, w)
            right = np.minimum.accumulate(right[::-1])[::-1]
            dl = np.where(left >= 0, cols - left, w + 1)
            dr = np.where(right < w, right - cols, w + 1)
            take_left = dl <= dr  # tie goes left
            src = np.where(take_left, np.clip(left, 0, w - 1), np.clip(right, 0, w - 1))
            img[i, m] = img[i, src[m]]
        else:
            edges = np.flatnonzero(np.diff(m.astype(np.int8)))
            starts = [0] if m[0] else []
            starts += [e + 1 for e in edges if m[e + 1]]
            ends = {}
            for s in starts:
                e = s
                while e + 1 < w and m[e + 1]:
                    e += 1
                ends[s] = e
            for s in starts:
                e = ends[s]
                lj, rj = s - 1, e + 1
                if lj < 0 and rj >= w:
                    continue
                if lj < 0:
                    src = rj
                elif rj >= w:
                    src = lj
                else:
                    src = lj if abs(disparity[i, lj]) <= abs(disparity[i, rj]) else rj
                img[i, s:e + 1] = img[i, src]

    if whole_rows:
        good = np.setdiff1d(np.arange(h), np.asarray(whole_rows))
        for i in whole_rows:
            j = good[np.argmin(np.abs(good - i))]  # argmin ties go to the smaller row
            img[i] = img[j]
    return img[..., 0] if flat_channels else img


def gather_render(image, disparity):
    """Inverse warp: out[i, j] = image[i, j - round(D[i, j])].

    ``disparity`` is in target coordinates (the map tells each output
    pixel where to sample the source view), matching the selection
    layer's semantics; source columns clamp at the borders, so the
    output never has holes.
    """
    img = np.asarray(image, dtype=np.float32)
    disp = _check_map(np.asarray(disparity, dtype=np.float32), "disparity")
    if img.shape[:2] != disp.shape:
        raise ValueError(
            f"image dims {img.shape[:2]} do not match disparity {disp.shape}")
    h, w = disp.shape
    cols = np.arange(w)[None, :]
    src = np.clip(cols - _round_half_away(disp).astype(np.int64), 0, w - 1)
    rows = np.arange(h)[:, None]
    return img[rows, src]


def _pair_views(pair):
    try:
        return pair.left, pair.right
    except AttributeError:
        left, right = pair
        return left, right


def _shift_mae(left, right, delta):
    est = left[:, np.clip(np.arange(left.shape[1]) - delta, 0, left.shape[1] - 1)]
    return float(np.mean(np.abs(est - right), dtype=np.float64))


def fit_global_disparity(pairs, search=(-15, 16)):
    """Single shift minimizing mean L1 against the right views.

    Exhaustive over integer deltas in the inclusive ``search`` interval;
    the estimate for delta is the left view gathered with replicate
    borders (est[j] = left[j - delta]). Ties break toward smaller |delta|,
    then toward the negative candidate.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("fit_global_disparity needs at least one pair")
    lo, hi = int(search[0]), int(search[1])
    if lo > hi:
        raise ValueError(f"empty search interval [{lo}, {hi}]")
    views = []
    for p in pairs:
        left, right = _pair_views(p)
        left = np.asarray(left, dtype=np.float32)
        right = np.asarray(right, dtype=np.float32)
        if left.shape != right.shape:
            raise ValueError("pair views must share a shape")
        if max(abs(lo), abs(hi)) >= left.shape[1]:
            raise ValueError("search interval wider than the image")
        views.append((left, right))

    best_delta, best_err = None, None
    for delta in sorted(range(lo, hi + 1), key=lambda d: (abs(d), d > 0)):
        err = float(np.mean([_shift_mae(l, r, delta) for l, r in views]))
        if best_err is None or err < best_err:
            best_delta, best_err = delta, err
    return best_delta


def _to_gray(image):
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 3:
        return img.mean(axis=2)
    if img.ndim == 2:
        return img
    raise ValueError(f"expected (H, W) or (H, W, C) image, got shape {img.shape}")


def _box_sum(a, radius):
    """Window sums with truncated (not padded) borders, window = 2r + 1."""
    h, w = a.shape
    s = np.zeros((h + 1, w + 1), dtype=np.float64)
    s[1:, 1:] = a.cumsum(axis=0).cumsum(axis=1)
    r = radius
    i0 = np.clip(np.arange(h) - r, 0, h)
    i1 = np.clip(np.arange(h) + r + 1, 0, h)
    j0 = np.clip(np.arange(w) - r, 0, w)
    j1 = np.clip(np.arange(w) + r + 1, 0, w)
    return (s[i1[:, None], j1[None, :]] - s[i0[:, None], j1[None, :]]
            - s[i1[:, None], j0[None, :]] + s[i0[:, None], j0[None, :]])


def block_match_disparity(left, right, window=7, drange=None):
    """Per-pixel SAD block matching, target-indexed on the right view.

    For each right-view pixel the returned d minimizes the sum of absolute
    differences between the window around it and the window around
    left[i, j - d] (replicate borders, truncated windows at the frame
    edge). Ties break toward smaller |d|, then the negative candidate, so
    textureless regions report 0.
    """
    from .selection import DisparityRange

    if drange is None:
        drange = DisparityRange()
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    lg, rg = _to_gray(left), _to_gray(right)
    if lg.shape != rg.shape:
        raise ValueError("left/right shapes differ")
    h, w = lg.shape
    if window > h or window > w:
        raise ValueError(f"window {window} exceeds image {h}x{w}")
    if w <= drange.max_magnitude():
        raise ValueError("disparity range wider than the image")

    radius = window // 2
    cols = np.arange(w)
    best_cost = None
    best_d = None
    for d in sorted(drange.disparities().tolist(), key=lambda v: (abs(v), v > 0)):
        shifted = lg[:, np.clip(cols - d, 0, w - 1)]
        cost = _box_sum(np.abs(rg - shifted).astype(np.float64), radius)
        if best_cost is None:
            best_cost = cost
            best_d = np.full((h, w), d, dtype=np.float32)
        else:
            better = cost < best_cost
            best_cost = np.where(better, cost, best_cost)
            best_d = np.where(better, np.float32(d), best_d)
    return best_d
