"""Mini-batch SGD training with a step learning-rate schedule,
deterministic sampling, checkpointing, and CSV metric logging.

Every random choice (epoch shuffles, crop offsets, dropout masks) is
derived functionally from (config seed, stream tag, position) with
numpy SeedSequence, so a resumed run consumes exactly the same random
numbers as an uninterrupted one and checkpoint-resume equivalence is
bit-exact by construction.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .data import preprocess_for_eval, sample_epoch_order
from .evaluation import mae
from .imgio import to_nchw
from .network import Network, NetworkConfig, build_network, predict_right
from .selection import DisparityRange

_STREAM_SHUFFLE = 1
_STREAM_CROP = 2
_STREAM_DROPOUT = 3

RNG_SCHEME = "derived-v1"


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters. Defaults follow the full-scale recipe:
    batches of 64 for 100k iterations, lr 0.002 cut by 10x every 20k,
    dropout 0.5 on the fully connected branch, no weight decay."""

    batch_size: int = 64
    total_iters: int = 100000
    base_lr: float = 0.002
    lr_step: int = 20000
    lr_factor: float = 0.1
    momentum: float = 0.0
    weight_decay: float = 0.0
    dropout: float = 0.5
    seed: int = 0
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_iters < 0:
            raise ValueError("total_iters must be >= 0")
        if self.lr_step < 1:
            raise ValueError("lr_step must be >= 1")
        if not 0.0 < self.lr_factor <= 1.0:
            raise ValueError("lr_factor must be in (0, 1]")
        if self.weight_decay != 0.0:
            raise ValueError("weight decay is not used; weight_decay must be 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")

    def with_options(self, **overrides):
        return replace(self, **overrides)


def lr_schedule(iteration, cfg):
    """base_lr * lr_factor ** floor(iteration / lr_step)."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return cfg.base_lr * cfg.lr_factor ** (iteration // cfg.lr_step)


def sgd_step(params, grads, lr, momentum=0.0, velocity=None):
    """In-place SGD update: v <- momentum*v + g; w <- w - lr*v.

    ``params`` maps names to Tensors, ``grads`` names to arrays. Returns
    the velocity dict (created on first use when momentum != 0). A
    non-finite gradient aborts with the parameter named.
    """
    if momentum != 0.0 and velocity is None:
        velocity = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ad.ShapeError(
                f"gradient for {name} has shape {g.shape}, expected {p.data.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name}")
        if momentum != 0.0:
            v = velocity.get(name)
            v = g.astype(np.float32) if v is None else momentum * v + g
            velocity[name] = v.astype(np.float32)
            p.data -= np.float32(lr) * velocity[name]
        else:
            p.data -= np.float32(lr) * g
    return velocity


# --- checkpoint serialization -------------------------------------------

_MAGIC = b"D3DC"
_VERSION = 1


class CheckpointError(ValueError):
    """Raised for malformed checkpoint files or mismatched contents."""


@dataclass
class Checkpoint:
    """Named f32 arrays (parameters, batch-norm stats, optimizer velocity)
    plus the iteration counter, the RNG scheme descriptor, and the network
    configuration needed to rebuild the model."""

    entries: dict
    iteration: int
    rng_state: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _config_to_meta(config):
    d = config.disparity
    return {
        "input_hw": list(config.input_hw),
        "stages": [list(s) for s in config.stages],
        "fc_hidden": config.fc_hidden,
        "fc_spatial": list(config.fc_spatial),
        "disparity": [d.d_min, d.d_max, d.has_empty],
        "side_branches": config.side_branches,
        "use_selection": config.use_selection,
        "init_std": config.init_std,
        "seed": config.seed,
    }


def _config_from_meta(meta):
    dmin, dmax, empty = meta["disparity"]
    return NetworkConfig(
        input_hw=tuple(meta["input_hw"]),
        stages=tuple(tuple(s) for s in meta["stages"]),
        fc_hidden=meta["fc_hidden"],
        fc_spatial=tuple(meta["fc_spatial"]),
        disparity=DisparityRange(dmin, dmax, empty),
        side_branches=meta["side_branches"],
        use_selection=meta["use_selection"],
        init_std=meta["init_std"],
        seed=meta["seed"],
    )


def checkpoint_from_network(net, iteration=0, rng_state=None, velocity=None):
    entries = {}
    for name, p in net.params.items():
        entries[name] = p.data.copy()
    for bname, state in net.bn_states.items():
        entries[f"bn/{bname}/running_mean"] = state.running_mean.copy()
        entries[f"bn/{bname}/running_var"] = state.running_var.copy()
        entries[f"bn/{bname}/batches_seen"] = np.float32(state.batches_seen)
    if velocity:
        for name, v in velocity.items():
            entries[f"vel/{name}"] = v.copy()
    return Checkpoint(entries=entries, iteration=iteration,
                      rng_state=dict(rng_state or {}),
                      meta=_config_to_meta(net.config))


def network_from_checkpoint(ckpt):
    """Rebuild (network, velocity dict) from a checkpoint.

    Raises CheckpointError naming any entry that does not correspond to a
    parameter of the rebuilt architecture, and on any shape mismatch.
    """
    net = build_network(_config_from_meta(ckpt.meta))
    velocity = {}
    for name, arr in ckpt.entries.items():
        if name.startswith("bn/"):
            _, bname, stat = name.split("/", 2)
            state = net.bn_states.get(bname)
            if state is None:
                raise CheckpointError(f"unknown parameter name in checkpoint: {name}")
            if stat == "running_mean":
                state.running_mean = np.array(arr, dtype=np.float32)
            elif stat == "running_var":
                state.running_var = np.array(arr, dtype=np.float32)
            elif stat == "batches_seen":
                state.batches_seen = int(arr)
            else:
                raise CheckpointError(f"unknown parameter name in checkpoint: {name}")
            continue
        if name.startswith("vel/"):
            pname = name[4:]
            if pname not in net.params:
                raise CheckpointError(f"unknown parameter name in checkpoint: {name}")
            velocity[pname] = np.array(arr, dtype=np.float32)
            continue
        p = net.params.get(name)
        if p is None:
            raise CheckpointError(f"unknown parameter name in checkpoint: {name}")
        if p.data.shape != arr.shape:
            raise CheckpointError(
                f"checkpoint entry {name} has shape {arr.shape}, expected {p.data.shape}")
        p.data = np.array(arr, dtype=np.float32)
    return net, velocity


def save_checkpoint(ckpt, path):
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<II", _VERSION, len(ckpt.entries))
    for name, arr in ckpt.entries.items():
        arr = np.asarray(arr, dtype=np.float32)
        nb = name.encode("utf-8")
        blob += struct.pack("<I", len(nb))
        blob += nb
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += arr.astype("<f4", copy=False).tobytes()
    rng_b = json.dumps(ckpt.rng_state, sort_keys=True).encode("utf-8")
    meta_b = json.dumps(ckpt.meta, sort_keys=True).encode("utf-8")
    blob += struct.pack("<Q", ckpt.iteration)
    blob += struct.pack("<I", len(rng_b)) + rng_b
    blob += struct.pack("<I", len(meta_b)) + meta_b
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def u8(self):
        return self.take(1)[0]


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4) != _MAGIC:
        raise CheckpointError("bad checkpoint magic (not a checkpoint file)")
    version = r.u32()
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    count = r.u32()
    entries = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u8()
        shape = tuple(r.u32() for _ in range(rank))
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw = r.take(4 * n)
        arr = np.frombuffer(raw, dtype="<f4").astype(np.float32)
        entries[name] = arr.reshape(shape) if rank else np.float32(arr[0])
    iteration = r.u64()
    rng_state = json.loads(r.take(r.u32()).decode("utf-8"))
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(entries=entries, iteration=int(iteration),
                      rng_state=rng_state, meta=meta)


# --- metric log ----------------------------------------------------------

METRIC_HEADER = "iter,lr,train_loss,val_mae"


def metrics_to_csv(rows, header=True):
    lines = [METRIC_HEADER] if header else []
    for it, lr, loss, val in rows:
        vs = "" if val is None else repr(float(val))
        lines.append(f"{it},{repr(float(lr))},{repr(float(loss))},{vs}")
    return "\n".join(lines) + "\n"


# --- training loop -------------------------------------------------------

def _derived_rng(*key):
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def _crop_rng(seed, epoch, index):
    return _derived_rng(seed, _STREAM_CROP, epoch, index)


def _batch_indices(dataset_len, batch_size, iteration, seed):
    """Global positions iteration*B .. +B map into per-epoch shuffles."""
    out = []
    orders = {}
    start = iteration * batch_size
    for pos in range(start, start + batch_size):
        epoch = pos // dataset_len
        within = pos % dataset_len
        if epoch not in orders:
            orders[epoch] = sample_epoch_order(dataset_len, seed, _STREAM_SHUFFLE, epoch)
        out.append((epoch, int(orders[epoch][within])))
    return out


def _validation_mae(net, val_pairs):
    total = 0.0
    with ad.no_grad():
        for left, right in val_pairs:
            pred, _ = predict_right(net, to_nchw([left]), mode="eval")
            total += mae(pred.data[0].transpose(1, 2, 0), right)
    return total / len(val_pairs)


def train(net, dataset, cfg, val_dataset=None, checkpoint_path=None,
          log_path=None, start_checkpoint=None, resize_to=None):
    """Run the optimization loop. Returns (final Checkpoint, metric rows).

    Each iteration samples a batch from seeded epoch reshuffles,
    preprocesses it (resize + synchronized random crop to the network
    input), forward-passes in train mode, takes an L1 step against the
    true right view, and appends one metric row. Validation MAE is
    computed and a checkpoint written every ``checkpoint_every``
    iterations (and at the end). A non-finite loss aborts after dumping a
    rescue checkpoint next to ``checkpoint_path``.

    ``start_checkpoint`` resumes: parameters, batch-norm stats, optimizer
    velocity, and the iteration counter are restored, and because all
    randomness is derived from (seed, stream, position), the continuation
    is bit-identical to an uninterrupted run.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    from .data import preprocess  # late import keeps module load order simple

    h, w = net.config.input_hw
    crop_to = (w, h)
    default_resize = (w * 9 // 8, h * 9 // 8) if resize_to is None else resize_to

    def resize_for(pair):
        ph, pw = pair.left.shape[:2]
        if resize_to is None and (pw, ph) == crop_to:
            return crop_to  # already network-sized: no resample, no jitter
        return default_resize

    velocity = None
    start_iter = 0
    if start_checkpoint is not None:
        loaded, vel = network_from_checkpoint(start_checkpoint)
        if loaded.config != net.config:
            raise CheckpointError("checkpoint architecture differs from the network")
        net.params = loaded.params
        net.bn_states = loaded.bn_states
        velocity = vel or None
        start_iter = start_checkpoint.iteration

    val_pairs = None
    if val_dataset is not None and len(val_dataset) > 0:
        val_pairs = [preprocess_for_eval(p, crop_to) for p in val_dataset]
        val_pairs = [(p.left, p.right) for p in val_pairs]

    rng_state = {"scheme": RNG_SCHEME, "seed": cfg.seed}
    rows = []
    log_fh = None
    if log_path is not None:
        import os
        fresh = not os.path.exists(log_path) or os.path.getsize(log_path) == 0
        log_fh = open(log_path, "a")
        if fresh:
            log_fh.write(METRIC_HEADER + "\n")

    def emit(row):
        rows.append(row)
        if log_fh is not None:
            log_fh.write(metrics_to_csv([row], header=False))
            log_fh.flush()

    def snapshot(iteration):
        return checkpoint_from_network(net, iteration, rng_state, velocity)

    try:
        n = len(dataset)
        for it in range(start_iter, cfg.total_iters):
            lr = lr_schedule(it, cfg)
            picks = _batch_indices(n, cfg.batch_size, it, cfg.seed)
            lefts, rights = [], []
            for epoch, idx in picks:
                src = dataset[idx]
                pair = preprocess(src, resize_for(src), crop_to,
                                  _crop_rng(cfg.seed, epoch, idx))
                lefts.append(pair.left)
                rights.append(pair.right)
            x = Tensor(to_nchw(lefts))
            y = Tensor(to_nchw(rights))

            drop_rng = _derived_rng(cfg.seed, _STREAM_DROPOUT, it)
            try:
                pred, _vol = predict_right(net, x, mode="train", rng=drop_rng,
                                           dropout_rate=cfg.dropout)
                loss = ad.l1_loss(pred, y)
                loss_val = float(loss.data)
                loss.backward()
                grads = {name: p.grad for name, p in net.params.items()
                         if p.grad is not None}
                velocity = sgd_step(net.params, grads, lr, cfg.momentum, velocity)
            except NonFiniteError as e:
                if checkpoint_path is not None:
                    save_checkpoint(snapshot(it), str(checkpoint_path) + ".abort")
                raise NonFiniteError(f"aborted at iteration {it}: {e}") from e
            for p in net.params.values():
                p.clear_grad()

            done = it + 1
            at_mark = cfg.checkpoint_every > 0 and done % cfg.checkpoint_every == 0
            val = None
            if at_mark and val_pairs is not None:
                val = _validation_mae(net, val_pairs)
            emit((it, lr, loss_val, val))
            if at_mark and checkpoint_path is not None:
                save_checkpoint(snapshot(done), checkpoint_path)

        final = snapshot(cfg.total_iters)
        if checkpoint_path is not None:
            save_checkpoint(final, checkpoint_path)
        return final, rows
    finally:
        if log_fh is not None:
            log_fh.close()
