"""Quantitative evaluation: MAE in 8-bit units, the per-frame oracle
offset search, and the multi-method comparison harness.

Methods are compared on identical preprocessed frames. ``learned`` runs
the trained synthesizer; ``learned_oracle`` additionally grants it the
best constant disparity offset per frame; ``global_disparity`` and
``block_match`` are the classical baselines; ``regression`` is the
direct-color ablation network; ``ground_truth`` copies the true right
view (a zero-error harness check).
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dibr import (block_match_disparity, fit_global_disparity, gather_render)
from .selection import DisparityVolume

METHODS = ("learned", "learned_oracle", "global_disparity", "block_match",
           "regression", "ground_truth")


def worker_count():
    """Worker cap from STEREOFORGE_THREADS; 0 (default) means run
    single-threaded in deterministic reference mode."""
    raw = os.environ.get("STEREOFORGE_THREADS", "0").strip()
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"STEREOFORGE_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise ValueError("STEREOFORGE_THREADS must be >= 0")
    return n


def _pmap(fn, items):
    n = worker_count()
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def mae(pred, truth):
    """Mean absolute error over all pixels and channels, in 8-bit units
    (x255 of the [0,1] representation)."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return float(np.mean(np.abs(pred - truth)) * 255.0)


def _volume_render(left, probs, drange, offset):
    """Selection-style render with every channel's disparity shifted by
    ``offset``: out[j] = sum_d p_d[j] * left[j - (d + offset)]."""
    h, w = left.shape[:2]
    cols = np.arange(w)
    out = np.zeros_like(left)
    for d in drange.disparities():
        ch = drange.channel_of(int(d))
        src = np.clip(cols - (int(d) + offset), 0, w - 1)
        out += probs[ch][:, :, None] * left[:, src]
    return out


def oracle_shift(left, volume_or_disp, right, search=(-4, 4)):
    """Best constant integer disparity offset for one frame.

    ``volume_or_disp`` is either a single-image DisparityVolume or an
    (H, W) disparity map in target coordinates. Every offset in the
    inclusive ``search`` range is re-rendered and scored; returns
    (best_offset, best_mae) with ties going to the smallest |offset|,
    negative first. The search range must include 0, so the result never
    scores worse than the unshifted rendering.
    """
    lo, hi = search
    if lo > hi or lo > 0 or hi < 0:
        raise ValueError(f"search range {search} must include 0")
    h, w = left.shape[:2]
    if isinstance(volume_or_disp, DisparityVolume):
        drange = volume_or_disp.range
        worst = max(abs(drange.d_min + lo), abs(drange.d_max + hi))
        if worst >= w:
            raise ValueError(
                f"offset range {search} pushes disparities past the image width {w}")
        probs = volume_or_disp.probs.data
        if probs.shape[0] != 1:
            raise ValueError("oracle_shift expects a single-image volume")
        probs = probs[0]

        def render(offset):
            return _volume_render(left, probs, drange, offset)
    else:
        disp = np.asarray(volume_or_disp, dtype=np.float32)
        if disp.shape != (h, w):
            raise ValueError(f"disparity map must be {(h, w)}, got {disp.shape}")
        if float(np.abs(disp).max()) + max(abs(lo), abs(hi)) >= w:
            raise ValueError(
                f"offset range {search} pushes disparities past the image width {w}")

        def render(offset):
            return gather_render(left, disp + np.float32(offset))

    best = None
    for off in sorted(range(lo, hi + 1), key=lambda o: (abs(o), o > 0)):
        err = mae(render(off), right)
        if best is None or err < best[1]:
            best = (off, err)
    return best


@dataclass
class EvalReport:
    """Comparison results: per-frame MAE per method plus runtime stats."""

    methods: list
    frame_ids: list
    per_frame: dict
    seconds: dict = field(default_factory=dict)

    def mean(self, method):
        return float(np.mean(self.per_frame[method]))

    def fps(self, method):
        s = self.seconds.get(method, 0.0)
        return len(self.frame_ids) / s if s > 0 else float("inf")

    def to_csv(self):
        lines = ["method,frame_id,mae"]
        for m in self.methods:
            for fid, err in zip(self.frame_ids, self.per_frame[m]):
                lines.append(f"{m},{fid},{repr(float(err))}")
        return "\n".join(lines) + "\n"

    def table(self):
        rows = [(m, f"{self.mean(m):.4f}", f"{self.fps(m):.2f}")
                for m in self.methods]
        headers = ("method", "mean_mae", "frames_per_s")
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
        out = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
        for r in rows:
            out.append("  ".join(r[i].ljust(widths[i]) for i in range(3)))
        return "\n".join(out)


def compare(dataset, methods, net=None, regression_net=None,
            oracle_search=(-4, 4), block_window=7, global_search=(-15, 16)):
    """Evaluate each requested method on identical frames.

    When a network is supplied, frames are first resized to its input
    dims (deterministically, no crop); methods then all see the same
    views. Frame order and per-frame lists are order-stable regardless
    of the worker count.
    """
    from .data import preprocess_for_eval

    if len(dataset) == 0:
        raise ValueError("evaluation dataset is empty")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    if ("learned" in methods or "learned_oracle" in methods) and net is None:
        raise ValueError("the learned methods require a trained network")
    if "regression" in methods and regression_net is None:
        raise ValueError("the regression method requires its ablation network")

    pairs = list(dataset)
    ref = net or regression_net
    if ref is not None:
        h, w = ref.config.input_hw
        pairs = [preprocess_for_eval(p, (w, h)) for p in pairs]
    lefts = [p.left for p in pairs]
    rights = [p.right for p in pairs]
    ids = [p.id or str(i) for i, p in enumerate(pairs)]

    report = EvalReport(methods=list(methods), frame_ids=ids, per_frame={})

    preds_cache = {}

    def learned_outputs():
        if "learned" not in preds_cache:
            from .network import synthesize_batches
            preds_cache["learned"] = synthesize_batches(net, lefts)
        return preds_cache["learned"]

    for m in methods:
        t0 = time.perf_counter()
        if m == "ground_truth":
            errs = [mae(r, r) for r in rights]
        elif m == "global_disparity":
            delta = fit_global_disparity(pairs, search=global_search)
            errs = _pmap(lambda i: mae(gather_render(
                lefts[i], np.full(lefts[i].shape[:2], delta, dtype=np.float32)),
                rights[i]), range(len(pairs)))
        elif m == "block_match":
            def bm(i):
                disp = block_match_disparity(lefts[i], rights[i], window=block_window)
                return mae(gather_render(lefts[i], disp), rights[i])
            errs = _pmap(bm, range(len(pairs)))
        elif m == "learned":
            outs, _ = learned_outputs()
            errs = [mae(o, r) for o, r in zip(outs, rights)]
        elif m == "learned_oracle":
            _, vols = learned_outputs()
            def orc(i):
                return oracle_shift(lefts[i], vols[i], rights[i],
                                    search=oracle_search)[1]
            errs = _pmap(orc, range(len(pairs)))
        elif m == "regression":
            from .network import synthesize_batches
            outs, _ = synthesize_batches(regression_net, lefts)
            errs = [mae(np.clip(o, 0.0, 1.0), r) for o, r in zip(outs, rights)]
        report.per_frame[m] = errs
        report.seconds[m] = time.perf_counter() - t0
    return report
