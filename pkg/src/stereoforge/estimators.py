"""scikit-learn style estimators wrapping the toolkit.

StereoSynthesizer is the trainable model (fit on matched left/right
image batches, predict right views from lefts); GlobalShiftBaseline
fits the single best constant disparity; BlockMatcher is a stateless
transformer from stereo pairs to disparity maps. All follow the
get_params/set_params contract via sklearn.base.BaseEstimator, keep
constructor arguments flat, and expose fitted state through
trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .data import StereoDataset, StereoPair
from .dibr import block_match_disparity, fit_global_disparity, gather_render
from .evaluation import mae
from .network import NetworkConfig, build_network, synthesize_batches
from .selection import DisparityRange
from .training import TrainConfig, train
from .validation import check_image_batch, check_pairs


class StereoSynthesizer(BaseEstimator):
    """End-to-end trainable left-to-right view synthesizer.

    Defaults are desk-scale; image dims are taken from the training data
    unless (height, width) is given. fit(X, y) expects lefts in X and
    the matching rights in y, each an (N, H, W, 3) array or a list of
    (H, W, 3) arrays in [0, 1].
    """

    def __init__(self, height=None, width=None, stages=((1, 8), (1, 16)),
                 fc_hidden=64, d_min=-8, d_max=8, side_branches=True,
                 use_selection=True, init_std=0.01, batch_size=16,
                 total_iters=500, base_lr=0.002, lr_step=1000, lr_factor=0.1,
                 momentum=0.0, dropout=0.0, seed=0):
        self.height = height
        self.width = width
        self.stages = stages
        self.fc_hidden = fc_hidden
        self.d_min = d_min
        self.d_max = d_max
        self.side_branches = side_branches
        self.use_selection = use_selection
        self.init_std = init_std
        self.batch_size = batch_size
        self.total_iters = total_iters
        self.base_lr = base_lr
        self.lr_step = lr_step
        self.lr_factor = lr_factor
        self.momentum = momentum
        self.dropout = dropout
        self.seed = seed

    def _network_config(self, sample_shape):
        h = self.height if self.height is not None else sample_shape[0]
        w = self.width if self.width is not None else sample_shape[1]
        n = len(self.stages)
        fc_spatial = (h >> n, w >> n)
        return NetworkConfig(
            input_hw=(h, w), stages=tuple(tuple(s) for s in self.stages),
            fc_hidden=self.fc_hidden, fc_spatial=fc_spatial,
            disparity=DisparityRange(self.d_min, self.d_max),
            side_branches=self.side_branches, use_selection=self.use_selection,
            init_std=self.init_std, seed=self.seed)

    def fit(self, X, y):
        lefts, rights = check_pairs(X, y)
        cfg = self._network_config(lefts[0].shape)
        tcfg = TrainConfig(batch_size=self.batch_size, total_iters=self.total_iters,
                           base_lr=self.base_lr, lr_step=self.lr_step,
                           lr_factor=self.lr_factor, momentum=self.momentum,
                           dropout=self.dropout, seed=self.seed,
                           checkpoint_every=0)
        ds = StereoDataset([StereoPair(left=l, right=r, id=str(i))
                            for i, (l, r) in enumerate(zip(lefts, rights))])
        net = build_network(cfg)
        ckpt, rows = train(net, ds, tcfg)
        self.network_ = net
        self.checkpoint_ = ckpt
        self.history_ = rows
        self.n_iter_ = tcfg.total_iters
        return self

    def predict(self, X):
        self._check_fitted()
        lefts = check_image_batch(X)
        h, w = self.network_.config.input_hw
        for i, im in enumerate(lefts):
            if im.shape[:2] != (h, w):
                raise ValueError(
                    f"X[{i}] has dims {im.shape[:2]}; this model expects {(h, w)}")
        outs, _ = synthesize_batches(self.network_, lefts)
        return np.stack([np.clip(o, 0.0, 1.0) for o in outs])

    def score(self, X, y):
        """Negative mean MAE in 8-bit units (greater is better)."""
        lefts, rights = check_pairs(X, y)
        preds = self.predict(lefts)
        return -float(np.mean([mae(p, r) for p, r in zip(preds, rights)]))

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise RuntimeError("this StereoSynthesizer instance is not fitted yet")


class GlobalShiftBaseline(BaseEstimator):
    """Constant-disparity baseline: fit the single integer shift that
    minimizes mean L1 against the right views, predict by shifting."""

    def __init__(self, d_min=-15, d_max=16):
        self.d_min = d_min
        self.d_max = d_max

    def fit(self, X, y):
        lefts, rights = check_pairs(X, y)
        self.shift_ = fit_global_disparity(
            list(zip(lefts, rights)), search=(self.d_min, self.d_max))
        return self

    def predict(self, X):
        if not hasattr(self, "shift_"):
            raise RuntimeError("this GlobalShiftBaseline instance is not fitted yet")
        lefts = check_image_batch(X)
        outs = []
        for im in lefts:
            disp = np.full(im.shape[:2], self.shift_, dtype=np.float32)
            outs.append(gather_render(im, disp))
        return np.stack(outs)

    def score(self, X, y):
        lefts, rights = check_pairs(X, y)
        preds = self.predict(lefts)
        return -float(np.mean([mae(p, r) for p, r in zip(preds, rights)]))


class BlockMatcher(BaseEstimator, TransformerMixin):
    """Stateless SAD block matcher: transforms (left, right) pairs into
    target-indexed disparity maps."""

    def __init__(self, window=7, d_min=-15, d_max=16):
        self.window = window
        self.d_min = d_min
        self.d_max = d_max

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        """X is a sequence of (left, right) pairs; returns (N, H, W)."""
        drange = DisparityRange(self.d_min, self.d_max)
        outs = []
        for i, pair in enumerate(X):
            left, right = pair
            outs.append(block_match_disparity(left, right, window=self.window,
                                              drange=drange))
        if not outs:
            raise ValueError("X must contain at least one pair")
        return np.stack(outs)
