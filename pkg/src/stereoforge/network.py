"""View-synthesis network: configurable trunk, multi-scale branches,
and the selection head.

The trunk is a VGG-style stack of 3x3 conv stages, each closed by a 2x2
max pool. After every pool a side branch (batch norm, 3x3 conv into the
disparity representation, bilinear-initialized deconv back to input
resolution) taps the features at that scale; the top features also feed a
fully connected path that is reshaped to a coarse spatial grid and
deconvolved up. All branch outputs are summed, passed through one last
3x3 conv, and either softmaxed into a disparity volume for selection
(default) or emitted directly as a 3-channel image (regression ablation).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .imgio import bilinear_resize, from_nchw, nearest_resize, to_nchw
from .selection import (DisparityRange, DisparityVolume, logits_to_volume,
                        selection_forward, shifted_stack)


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters.

    ``input_hw`` is (height, width) and must be divisible by 2**len(stages);
    ``stages`` lists (conv_count, channels) per scale; ``fc_spatial`` is the
    (h, w) grid the fully connected path reshapes to, and must divide the
    input dims by one common integer factor. Defaults reproduce the
    full-scale architecture; ``toy()`` is a desk-scale preset.
    """

    input_hw: tuple = (160, 384)
    stages: tuple = ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512))
    fc_hidden: int = 4096
    fc_spatial: tuple = (5, 12)
    disparity: DisparityRange = field(default_factory=DisparityRange)
    side_branches: bool = True
    use_selection: bool = True
    init_std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        h, w = self.input_hw
        n = len(self.stages)
        if n < 1:
            raise ValueError("at least one stage is required")
        if h < 1 or w < 1 or h % (1 << n) or w % (1 << n):
            raise ValueError(
                f"input {h}x{w} must be positive and divisible by 2**{n}")
        for cc, ch in self.stages:
            if cc < 1 or ch < 1:
                raise ValueError(f"bad stage spec {(cc, ch)}")
        if self.fc_hidden < 1:
            raise ValueError("fc_hidden must be >= 1")
        fh, fw = self.fc_spatial
        if fh < 1 or fw < 1 or h % fh or w % fw or h // fh != w // fw:
            raise ValueError(
                f"fc_spatial {self.fc_spatial} must divide input {self.input_hw} "
                f"by one common factor")
        if not self.init_std > 0:
            raise ValueError("init_std must be > 0")

    @property
    def n_stages(self):
        return len(self.stages)

    @property
    def fc_stride(self):
        return self.input_hw[0] // self.fc_spatial[0]

    @property
    def rep_channels(self):
        """Width of the disparity representation all branches share."""
        return self.disparity.channel_count

    @property
    def logit_channels(self):
        return self.rep_channels if self.use_selection else 3

    @classmethod
    def toy(cls, **overrides):
        """Small preset that trains in minutes on a CPU."""
        base = dict(
            input_hw=(32, 64),
            stages=((1, 8), (1, 16)),
            fc_hidden=64,
            fc_spatial=(8, 16),
            disparity=DisparityRange(-8, 8),
        )
        base.update(overrides)
        return cls(**base)

    def with_options(self, **overrides):
        return replace(self, **overrides)


def bilinear_deconv_kernel(stride):
    """The 2S x 2S bilinear upsampling kernel for a stride-S deconv.

    Separable profile w[i] = 1 - |i/S - C| with C = (2S - 1 - (S mod 2)) / (2S);
    initializing a deconv with it makes the layer interpolate bilinearly.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    k = 2 * stride
    c = (2 * stride - 1 - (stride % 2)) / (2 * stride)
    prof = 1.0 - np.abs(np.arange(k, dtype=np.float64) / stride - c)
    return np.outer(prof, prof).astype(np.float32)


def bilinear_deconv_weight(stride, cin, cout):
    """(Cin, Cout, 2S, 2S) weight: the bilinear kernel on matching channel
    pairs, zero across mismatched pairs."""
    k = bilinear_deconv_kernel(stride)
    w = np.zeros((cin, cout, 2 * stride, 2 * stride), dtype=np.float32)
    for i in range(min(cin, cout)):
        w[i, i] = k
    return w


class Network:
    """Parameter store plus the forward pass for one NetworkConfig."""

    def __init__(self, config, params, bn_states):
        self.config = config
        self.params = params
        self.bn_states = bn_states

    def parameters(self):
        return self.params

    def forward_logits(self, x, mode="eval", rng=None, dropout_rate=0.0):
        cfg = self.config
        x = x if isinstance(x, Tensor) else Tensor(x)
        n = x.shape[0]
        if x.shape[1:] != (3, *cfg.input_hw):
            raise ad.ShapeError(
                f"input must be (N, 3, {cfg.input_hw[0]}, {cfg.input_hw[1]}), got {x.shape}")
        p = self.params

        feats = []
        h = x
        for si, (conv_count, _ch) in enumerate(cfg.stages, 1):
            for ci in range(conv_count):
                h = ad.relu(ad.conv2d(h, p[f"stage{si}.conv{ci}.weight"],
                                      p[f"stage{si}.conv{ci}.bias"], stride=1, pad=1))
            h = ad.max_pool2d(h, 2, 2)
            feats.append(h)

        outs = []
        if cfg.side_branches:
            for si, f in enumerate(feats, 1):
                s = 1 << si
                b = ad.batch_norm(f, p[f"branch{si}.bn.gamma"], p[f"branch{si}.bn.beta"],
                                  self.bn_states[f"branch{si}"], mode=mode)
                b = ad.conv2d(b, p[f"branch{si}.conv.weight"], p[f"branch{si}.conv.bias"],
                              stride=1, pad=1)
                outs.append(ad.deconv2d(b, p[f"branch{si}.deconv.weight"],
                                        stride=s, pad=s // 2))

        top = feats[-1]
        flat = ad.reshape(top, (n, top.size // n))
        h1 = ad.dropout(ad.relu(ad.fully_connected(flat, p["fc.fc1.weight"], p["fc.fc1.bias"])),
                        dropout_rate, rng, mode)
        h2 = ad.dropout(ad.relu(ad.fully_connected(h1, p["fc.fc2.weight"], p["fc.fc2.bias"])),
                        dropout_rate, rng, mode)
        lin = ad.fully_connected(h2, p["fc.out.weight"], p["fc.out.bias"])
        fh, fw = cfg.fc_spatial
        grid = ad.reshape(lin, (n, cfg.rep_channels, fh, fw))
        outs.append(ad.deconv2d(grid, p["fc.deconv.weight"],
                                stride=cfg.fc_stride, pad=cfg.fc_stride // 2))

        summed = ad.add_n(outs)
        return ad.conv2d(summed, p["head.conv.weight"], p["head.conv.bias"], stride=1, pad=1)


def build_network(config):
    """Instantiate parameters for ``config``.

    Conv and fully connected weights draw from N(0, init_std) with a
    generator seeded by ``config.seed`` (two builds of the same config are
    bit-identical); biases start at zero, batch-norm at identity, and all
    deconvs at bilinear interpolation.
    """
    rng = np.random.default_rng(config.seed)
    std = config.init_std
    params = {}
    bn_states = {}

    def normal(shape):
        return rng.normal(0.0, std, size=shape).astype(np.float32)

    def param(name, arr):
        params[name] = Tensor(arr, requires_grad=True)

    cin = 3
    for si, (conv_count, ch) in enumerate(config.stages, 1):
        for ci in range(conv_count):
            param(f"stage{si}.conv{ci}.weight", normal((ch, cin, 3, 3)))
            param(f"stage{si}.conv{ci}.bias", np.zeros(ch, dtype=np.float32))
            cin = ch

    rep = config.rep_channels
    if config.side_branches:
        for si, (_cc, ch) in enumerate(config.stages, 1):
            s = 1 << si
            param(f"branch{si}.bn.gamma", np.ones(ch, dtype=np.float32))
            param(f"branch{si}.bn.beta", np.zeros(ch, dtype=np.float32))
            bn_states[f"branch{si}"] = ad.BatchNormState.for_channels(ch)
            param(f"branch{si}.conv.weight", normal((rep, ch, 3, 3)))
            param(f"branch{si}.conv.bias", np.zeros(rep, dtype=np.float32))
            param(f"branch{si}.deconv.weight", bilinear_deconv_weight(s, rep, rep))

    h, w = config.input_hw
    n = config.n_stages
    top_ch = config.stages[-1][1]
    flat_dim = top_ch * (h >> n) * (w >> n)
    fh, fw = config.fc_spatial
    param("fc.fc1.weight", normal((flat_dim, config.fc_hidden)))
    param("fc.fc1.bias", np.zeros(config.fc_hidden, dtype=np.float32))
    param("fc.fc2.weight", normal((config.fc_hidden, config.fc_hidden)))
    param("fc.fc2.bias", np.zeros(config.fc_hidden, dtype=np.float32))
    param("fc.out.weight", normal((config.fc_hidden, rep * fh * fw)))
    param("fc.out.bias", np.zeros(rep * fh * fw, dtype=np.float32))
    param("fc.deconv.weight", bilinear_deconv_weight(config.fc_stride, rep, rep))

    param("head.conv.weight", normal((config.logit_channels, rep, 3, 3)))
    param("head.conv.bias", np.zeros(config.logit_channels, dtype=np.float32))
    return Network(config, params, bn_states)


def predict_right(net, left, mode="eval", rng=None, dropout_rate=0.0):
    """Forward pass producing the synthesized right view.

    Returns (image, volume); ``volume`` is None when the network runs the
    direct-regression head instead of the selection layer.
    """
    left = left if isinstance(left, Tensor) else Tensor(left)
    logits = net.forward_logits(left, mode=mode, rng=rng, dropout_rate=dropout_rate)
    if not net.config.use_selection:
        return logits, None
    volume = logits_to_volume(logits, net.config.disparity)
    stack = shifted_stack(left, net.config.disparity)
    return selection_forward(stack, volume), volume


def synthesize_batches(net, images, batch_size=8):
    """Inference helper: run (H, W, 3) images through the net in eval mode.

    Returns (list of synthesized (H, W, 3) images, list of per-image
    volumes or Nones). No gradients are recorded.
    """
    outs, vols = [], []
    with ad.no_grad():
        for start in range(0, len(images), batch_size):
            chunk = images[start:start + batch_size]
            pred, vol = predict_right(net, to_nchw(chunk), mode="eval")
            outs.extend(from_nchw(pred.data))
            if vol is None:
                vols.extend([None] * len(chunk))
            else:
                for i in range(len(chunk)):
                    vols.append(DisparityVolume(
                        Tensor(vol.probs.data[i:i + 1]), net.config.disparity))
    return outs, vols


def upscale_full_res(volume, left_hires, k, method="bilinear"):
    """Selection at k times the trained resolution.

    The (single-image) volume's probabilities are upsampled to the high
    resolution (bilinear then per-pixel channel renormalization, or
    nearest), each disparity channel d is reinterpreted as a shift of k*d
    pixels, and the selection sum runs against the high-resolution left
    view. k=1 reproduces selection_forward exactly.
    """
    if int(k) != k or k < 1:
        raise ValueError(f"scale factor must be a positive integer, got {k}")
    k = int(k)
    if method not in ("bilinear", "nearest"):
        raise ValueError(f"method must be 'bilinear' or 'nearest', got {method!r}")
    probs = volume.probs.data
    if probs.shape[0] != 1:
        raise ValueError("upscale_full_res expects a single-image volume")
    drange = volume.range
    _n, c, h, w = probs.shape
    img = np.asarray(left_hires, dtype=np.float32)
    if img.shape != (k * h, k * w, 3):
        raise ValueError(
            f"high-res view must be {(k * h, k * w, 3)} for k={k}, got {img.shape}")
    if k * drange.max_magnitude() >= k * w:
        raise ValueError("scaled disparities exceed the high-res width")

    if k == 1:
        with ad.no_grad():
            stack = shifted_stack(Tensor(to_nchw([img])), drange)
            return from_nchw(selection_forward(stack, volume).data)[0]

    hwc = probs[0].transpose(1, 2, 0)
    up = (bilinear_resize if method == "bilinear" else nearest_resize)(hwc, (k * h, k * w))
    p = np.asarray(up, dtype=np.float32).transpose(2, 0, 1)
    if method == "bilinear":
        p = p / np.maximum(p.sum(axis=0, keepdims=True), np.float32(1e-12))

    cols = np.arange(k * w)
    out = np.zeros((k * h, k * w, 3), dtype=np.float32)
    for d in drange.disparities():
        ch = drange.channel_of(int(d))
        src = np.clip(cols - k * int(d), 0, k * w - 1)
        out += p[ch][:, :, None] * img[:, src]
    return out
