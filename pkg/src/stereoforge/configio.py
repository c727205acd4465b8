"""Flat key=value config files for the CLI.

Network keys use the ``network.`` prefix, optimizer keys ``train.``;
``data.resize`` overrides the pre-crop resize. Values use plain syntax:
booleans true/false, dims WxH, stages as comma-joined countxchannels
(``2x64,2x128``). CLI ``--set KEY=VALUE`` entries override file values.
"""

from __future__ import annotations

from .network import NetworkConfig
from .selection import DisparityRange
from .training import TrainConfig


def parse_kv(text):
    """Parse flat key=value lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def apply_overrides(kv, sets):
    merged = dict(kv)
    for item in sets:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        merged[key.strip()] = value.strip()
    return merged


def _parse_bool(s):
    low = s.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def parse_stages(s):
    """'2x64,2x128' -> ((2, 64), (2, 128))."""
    stages = []
    for part in s.split(","):
        count, _, ch = part.strip().partition("x")
        if not ch:
            raise ValueError(f"stage {part!r} must be countxchannels, e.g. 2x64")
        stages.append((int(count), int(ch)))
    return tuple(stages)


def parse_dims(s):
    """'384x160' -> (384, 160)."""
    a, _, b = s.partition("x")
    if not b:
        raise ValueError(f"expected WxH or AxB dims, got {s!r}")
    return (int(a), int(b))


_NETWORK_KEYS = {
    "height": ("height", int),
    "width": ("width", int),
    "stages": ("stages", parse_stages),
    "fc_hidden": ("fc_hidden", int),
    "fc_spatial": ("fc_spatial", parse_dims),
    "d_min": ("d_min", int),
    "d_max": ("d_max", int),
    "empty_channel": ("empty_channel", _parse_bool),
    "side_branches": ("side_branches", _parse_bool),
    "use_selection": ("use_selection", _parse_bool),
    "init_std": ("init_std", float),
    "seed": ("seed", int),
}

_TRAIN_KEYS = {
    "batch_size": int,
    "total_iters": int,
    "base_lr": float,
    "lr_step": int,
    "lr_factor": float,
    "momentum": float,
    "weight_decay": float,
    "dropout": float,
    "seed": int,
    "checkpoint_every": int,
}


def network_config_from(kv, base=None):
    """Build a NetworkConfig from ``network.*`` keys over ``base``
    (default: the toy preset)."""
    base = base if base is not None else NetworkConfig.toy()
    vals = {}
    for key, raw in kv.items():
        if not key.startswith("network."):
            continue
        suffix = key[len("network."):]
        if suffix not in _NETWORK_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        name, conv = _NETWORK_KEYS[suffix]
        vals[name] = conv(raw)

    h = vals.pop("height", base.input_hw[0])
    w = vals.pop("width", base.input_hw[1])
    dr = base.disparity
    d_min = vals.pop("d_min", dr.d_min)
    d_max = vals.pop("d_max", dr.d_max)
    empty = vals.pop("empty_channel", dr.has_empty)
    if "fc_spatial" in vals:
        fw, fh = vals["fc_spatial"]  # file syntax is WxH like every dim
        vals["fc_spatial"] = (fh, fw)
    kwargs = dict(
        input_hw=(h, w),
        stages=vals.pop("stages", base.stages),
        fc_hidden=vals.pop("fc_hidden", base.fc_hidden),
        fc_spatial=vals.pop("fc_spatial", None),
        disparity=DisparityRange(d_min, d_max, empty),
        side_branches=vals.pop("side_branches", base.side_branches),
        use_selection=vals.pop("use_selection", base.use_selection),
        init_std=vals.pop("init_std", base.init_std),
        seed=vals.pop("seed", base.seed),
    )
    if kwargs["fc_spatial"] is None:
        n = len(kwargs["stages"])
        kwargs["fc_spatial"] = (h >> n, w >> n)
    return NetworkConfig(**kwargs)


def train_config_from(kv, base=None):
    """Build a TrainConfig from ``train.*`` keys over ``base``."""
    base = base if base is not None else TrainConfig()
    vals = {}
    for key, raw in kv.items():
        if not key.startswith("train."):
            continue
        suffix = key[len("train."):]
        if suffix not in _TRAIN_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        vals[suffix] = _TRAIN_KEYS[suffix](raw)
    return base.with_options(**vals) if vals else base


def data_options_from(kv):
    """Extract ``data.*`` options; currently only data.resize (WxH)."""
    out = {}
    for key, raw in kv.items():
        if key.startswith(("network.", "train.")):
            continue
        if key == "data.resize":
            out["resize_to"] = parse_dims(raw)
        else:
            raise ValueError(f"unknown config key {key!r}")
    return out
