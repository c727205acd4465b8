"""Stereo-pair datasets: directory ingestion, train/eval preprocessing,
and a seeded synthetic generator with per-pixel ground-truth disparity.

Synthetic scenes compose textured layers back-to-front in the left view;
the right view is rendered from the ground-truth disparity with the
forward warp and background-biased hole filling. The disparity map is
warped alongside the color channels, so the stored ground truth is
expressed in right-view (target) coordinates: feeding it through the
selection layer as a one-hot volume reproduces the right view exactly on
non-hole pixels.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .dibr import disparity_render, fill_holes
from .imgio import bilinear_resize, nearest_resize, read_image, write_image

_IMAGE_EXTS = (".png", ".ppm")


@dataclass
class StereoPair:
    """One training/eval example. Views are (H, W, 3) float32 in [0, 1];
    gt_disparity, when present, is (H, W) float32 in right-view (target)
    coordinates, with holes marking disoccluded pixels."""

    left: np.ndarray
    right: np.ndarray
    gt_disparity: np.ndarray = None
    holes: np.ndarray = None
    id: str = ""

    def __post_init__(self):
        if self.left.shape != self.right.shape:
            raise ValueError(
                f"view shapes differ: {self.left.shape} vs {self.right.shape}")


class StereoDataset:
    """An ordered list of StereoPairs."""

    def __init__(self, pairs):
        self.pairs = list(pairs)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def __iter__(self):
        return iter(self.pairs)

    @property
    def ids(self):
        return [p.id for p in self.pairs]


def sample_epoch_order(n, seed, stream, epoch):
    """Deterministic permutation of range(n) for one (seed, stream, epoch)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, stream, epoch]))
    return rng.permutation(n)


# --- directory ingestion --------------------------------------------------

def _stem_map(directory):
    out = {}
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext.lower() in _IMAGE_EXTS:
            out[stem] = os.path.join(directory, name)
    return out


def load_stereo_dir(root):
    """Load pairs from root/left and root/right, matched by filename stem.

    Optional root/disp/<stem>.npy and root/holes/<stem>.npy sidecars are
    attached as ground truth. Unmatched files and empty datasets are
    distinct errors naming the offender.
    """
    left_dir = os.path.join(root, "left")
    right_dir = os.path.join(root, "right")
    for d in (left_dir, right_dir):
        if not os.path.isdir(d):
            raise FileNotFoundError(f"dataset is missing directory {d}")
    lefts = _stem_map(left_dir)
    rights = _stem_map(right_dir)
    for stem in lefts:
        if stem not in rights:
            raise ValueError(f"unmatched file: left/{stem} has no right-view counterpart")
    for stem in rights:
        if stem not in lefts:
            raise ValueError(f"unmatched file: right/{stem} has no left-view counterpart")
    if not lefts:
        raise ValueError(f"empty dataset: no image pairs under {root}")

    disp_dir = os.path.join(root, "disp")
    holes_dir = os.path.join(root, "holes")
    pairs = []
    for stem in sorted(lefts):
        left = read_image(lefts[stem])
        right = read_image(rights[stem])
        disp = holes = None
        dpath = os.path.join(disp_dir, stem + ".npy")
        if os.path.isfile(dpath):
            disp = np.load(dpath).astype(np.float32)
        hpath = os.path.join(holes_dir, stem + ".npy")
        if os.path.isfile(hpath):
            holes = np.load(hpath).astype(bool)
        pairs.append(StereoPair(left=left, right=right, gt_disparity=disp,
                                holes=holes, id=stem))
    return StereoDataset(pairs)


# --- preprocessing --------------------------------------------------------

def _resize_pair(pair, wh):
    w, h = wh
    ph, pw = pair.left.shape[:2]
    left = bilinear_resize(pair.left, (h, w))
    right = bilinear_resize(pair.right, (h, w))
    disp = holes = None
    if pair.gt_disparity is not None:
        disp = nearest_resize(pair.gt_disparity, (h, w)) * np.float32(w / pw)
    if pair.holes is not None:
        holes = nearest_resize(pair.holes.astype(np.float32), (h, w)) > 0.5
    return StereoPair(left=left, right=right, gt_disparity=disp,
                      holes=holes, id=pair.id)


def preprocess(pair, resize_to=(432, 180), crop_to=(384, 160), rng=None):
    """Resize both views to ``resize_to`` (width, height), then cut one
    random ``crop_to`` window at the same offset from both. Never flips.

    When resize and crop dims are equal, the offset is forced to (0, 0)
    and ``rng`` is not consumed. Ground-truth disparity is resampled with
    nearest neighbor and scaled by the width ratio.
    """
    rw, rh = resize_to
    cw, ch = crop_to
    if cw > rw or ch > rh:
        raise ValueError(f"crop {crop_to} exceeds resized dims {resize_to}")
    resized = _resize_pair(pair, resize_to)
    if (cw, ch) == (rw, rh):
        ox = oy = 0
    else:
        if rng is None:
            raise ValueError("rng is required when the crop is strictly smaller")
        ox = int(rng.integers(0, rw - cw + 1))
        oy = int(rng.integers(0, rh - ch + 1))

    def cut(a):
        return None if a is None else np.ascontiguousarray(a[oy:oy + ch, ox:ox + cw])

    return StereoPair(left=cut(resized.left), right=cut(resized.right),
                      gt_disparity=cut(resized.gt_disparity),
                      holes=cut(resized.holes), id=pair.id)


def preprocess_for_eval(pair, crop_to):
    """Deterministic eval-time variant: resize straight to the network
    input dims, no crop."""
    return _resize_pair(pair, crop_to)


# --- synthetic scenes -----------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    """One scene layer. ``disparity`` is an inclusive (lo, hi) integer
    range sampled per scene; ``rect`` is None for full frame, "random",
    or fractional (x0, y0, x1, y1). ``scale`` is the texture feature size
    in pixels."""

    kind: str = "noise"
    disparity: tuple = (0, 0)
    rect: object = None
    scale: float = 8.0

    def __post_init__(self):
        if self.kind not in ("noise", "stripes"):
            raise ValueError(f"unknown texture kind {self.kind!r}")
        lo, hi = self.disparity
        if lo > hi:
            raise ValueError(f"empty disparity range {self.disparity}")
        if lo < -15 or hi > 16:
            raise ValueError(
                f"layer disparity range {self.disparity} outside representable [-15, 16]")
        if self.scale <= 0:
            raise ValueError("texture scale must be positive")


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for one synthetic scene family: image dims plus layers
    listed back-to-front. Nearer layers must come out at strictly larger
    disparity than the layers they occlude; draws are constrained to
    honor that and an impossible ordering is an error."""

    width: int = 64
    height: int = 32
    layers: tuple = (LayerSpec(),)
    seed: int = 0

    def __post_init__(self):
        if self.width < 4 or self.height < 4:
            raise ValueError("scene dims must be at least 4x4")
        if not self.layers:
            raise ValueError("at least one layer is required")
        if self.layers[0].rect is not None:
            raise ValueError("layer 0 is the background and must be full-frame")


def parse_scene_spec(text):
    """Parse the flat key=value scene format.

    Keys: width, height, seed, and per layer ``layer.<i>.kind``,
    ``layer.<i>.disparity`` ("4" or "-4..6"), ``layer.<i>.rect``
    ("random" or "x0,y0,x1,y1" as fractions), ``layer.<i>.scale``.
    Layer indices must be contiguous from 0.
    """
    scene = {}
    layers = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key.startswith("layer."):
            parts = key.split(".")
            if len(parts) != 3 or not parts[1].isdigit():
                raise ValueError(f"line {lineno}: bad layer key {key!r}")
            layers.setdefault(int(parts[1]), {})[parts[2]] = value
        elif key in ("width", "height", "seed"):
            scene[key] = int(value)
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")

    specs = []
    for i in range(len(layers)):
        if i not in layers:
            raise ValueError(f"layer indices must be contiguous; missing layer.{i}")
        kv = layers[i]
        fields = {}
        if "kind" in kv:
            fields["kind"] = kv["kind"]
        if "disparity" in kv:
            fields["disparity"] = _parse_disparity(kv["disparity"])
        if "rect" in kv:
            fields["rect"] = _parse_rect(kv["rect"])
        if "scale" in kv:
            fields["scale"] = float(kv["scale"])
        unknown = set(kv) - {"kind", "disparity", "rect", "scale"}
        if unknown:
            raise ValueError(f"unknown layer key(s): {sorted(unknown)}")
        specs.append(LayerSpec(**fields))
    if not specs:
        specs = [LayerSpec()]
    return SceneSpec(width=scene.get("width", 64), height=scene.get("height", 32),
                     layers=tuple(specs), seed=scene.get("seed", 0))


def _parse_disparity(value):
    if ".." in value:
        lo, hi = value.split("..", 1)
        return (int(lo), int(hi))
    d = int(value)
    return (d, d)


def _parse_rect(value):
    if value in ("random", "full"):
        return None if value == "full" else "random"
    parts = [float(v) for v in value.split(",")]
    if len(parts) != 4:
        raise ValueError(f"rect must be x0,y0,x1,y1 fractions, got {value!r}")
    x0, y0, x1, y1 = parts
    if not (0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1):
        raise ValueError(f"rect fractions out of order: {value!r}")
    return (x0, y0, x1, y1)


def disparity_tint(d):
    """Deterministic per-layer color cue for a drawn disparity.

    Layer disparities are sampled independently of texture content, so
    without a visible correlate the scene's exact depth draw cannot be
    inferred from the left view at all (only its expectation can). Real
    footage carries monocular depth cues; this is the synthetic stand-in:
    three channel gains that move in different directions as d sweeps
    the representable range, keeping every value identifiable.
    """
    t = float(np.clip((d + 8.0) / 16.0, 0.0, 1.0))
    r = 0.25 + 0.75 * t
    g = 1.0 - 0.75 * t
    b = 0.5 + 0.5 * np.sin(2.0 * np.pi * t)
    return np.array([r, g, 0.2 + 0.8 * b], dtype=np.float32)


def _noise_texture(rng, h, w, scale):
    gh = max(2, int(np.ceil(h / scale)) + 1)
    gw = max(2, int(np.ceil(w / scale)) + 1)
    grid = rng.uniform(0.0, 1.0, size=(gh, gw, 3)).astype(np.float32)
    return bilinear_resize(grid, (h, w))


def _stripe_texture(rng, h, w, scale):
    fx = 1.0 / (scale * rng.uniform(0.8, 1.6))
    fy = fx * rng.uniform(-0.3, 0.3)
    phase = rng.uniform(0.0, 2 * np.pi)
    ys, xs = np.mgrid[0:h, 0:w]
    wave = 0.5 + 0.5 * np.sin(2 * np.pi * (fx * xs + fy * ys) + phase)
    tint_a = rng.uniform(0.0, 1.0, size=3)
    tint_b = rng.uniform(0.0, 1.0, size=3)
    tex = wave[:, :, None] * tint_a + (1.0 - wave)[:, :, None] * tint_b
    return tex.astype(np.float32)


def _layer_rect(rng, layer, h, w):
    if layer.rect is None:
        return 0, 0, h, w
    if layer.rect == "random":
        fw = rng.uniform(0.25, 0.75)
        fx = rng.uniform(0.0, 1.0 - fw)
        fh = rng.uniform(0.25, 0.75)
        fy = rng.uniform(0.0, 1.0 - fh)
        x0, y0, x1, y1 = fx, fy, fx + fw, fy + fh
    else:
        x0, y0, x1, y1 = layer.rect
    ix0, ix1 = int(round(x0 * w)), max(int(round(x0 * w)) + 1, int(round(x1 * w)))
    iy0, iy1 = int(round(y0 * h)), max(int(round(y0 * h)) + 1, int(round(y1 * h)))
    return iy0, ix0, min(iy1, h), min(ix1, w)


def synth_stereo(spec):
    """Generate one StereoPair (with gt_disparity and holes) from a spec.

    Deterministic in spec.seed. Layers compose back-to-front in the left
    view; the right view and the right-view disparity map come from one
    forward warp so occlusion winners are consistent, then holes are
    filled background-biased.
    """
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    left = np.zeros((h, w, 3), dtype=np.float32)
    disp = np.zeros((h, w), dtype=np.float32)

    prev_d = None
    for i, layer in enumerate(spec.layers):
        lo, hi = layer.disparity
        if prev_d is not None:
            lo = max(lo, prev_d + 1)
            if lo > hi:
                raise ValueError(
                    f"layer {i} cannot draw a disparity above layer {i - 1}'s "
                    f"({prev_d}); widen its range")
        d = int(rng.integers(lo, hi + 1))
        prev_d = d
        y0, x0, y1, x1 = _layer_rect(rng, layer, h, w)
        tex = (_noise_texture if layer.kind == "noise" else _stripe_texture)(
            rng, h, w, layer.scale)
        tex = 0.15 + 0.85 * tex * disparity_tint(d)[None, None, :]
        left[y0:y1, x0:x1] = tex[y0:y1, x0:x1]
        disp[y0:y1, x0:x1] = d

    stacked = np.concatenate([left, disp[:, :, None]], axis=2)
    warped, holes = disparity_render(stacked, disp)
    filled = fill_holes(warped, holes, disparity=warped[:, :, 3])
    right = np.clip(filled[:, :, :3], 0.0, 1.0)
    gt_right = filled[:, :, 3].astype(np.float32)
    return StereoPair(left=left, right=right, gt_disparity=gt_right,
                      holes=holes, id=f"seed{spec.seed}")


def synth_dataset(spec, count, seed=0, out_dir=None):
    """Generate ``count`` scenes with per-scene seeds derived from
    (seed, index); optionally write the dataset directory layout
    (left/, right/ PNGs plus disp/, holes/ arrays)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    pairs = []
    for i in range(count):
        scene_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        pair = synth_stereo(replace(spec, seed=scene_seed))
        pair.id = f"{i:04d}"
        pairs.append(pair)
    ds = StereoDataset(pairs)
    if out_dir is not None:
        for sub in ("left", "right", "disp", "holes"):
            os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
        for p in ds:
            write_image(os.path.join(out_dir, "left", p.id + ".png"), p.left)
            write_image(os.path.join(out_dir, "right", p.id + ".png"), p.right)
            np.save(os.path.join(out_dir, "disp", p.id + ".npy"), p.gt_disparity)
            np.save(os.path.join(out_dir, "holes", p.id + ".npy"), p.holes)
    return ds
