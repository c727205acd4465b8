"""Reverse-mode automatic differentiation over float32 numpy arrays.

The engine is a tape-free graph of ``Tensor`` nodes: every operation
records its parents and a backward closure on the output node, and
``Tensor.backward()`` replays those closures in reverse execution
(topological) order, accumulating gradients by summation. Everything is
NCHW float32; gradients live in ``Tensor.grad`` as plain numpy arrays.

Alongside the generic pieces (add, mul, reshape, reductions) this module
implements the layer set the view-synthesis network needs: 2-D
convolution, max pooling, transposed convolution, fully connected,
batch normalization, channel softmax, relu/dropout, and mean L1 loss.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """An operand shape violates an operation's contract."""


class GraphError(RuntimeError):
    """Graph misuse: non-scalar backward, or backward through a consumed graph."""


class NonFiniteError(FloatingPointError):
    """A tensor was constructed from, or a contract met, non-finite values."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float32 array plus an optional gradient and graph linkage.

    Leaf tensors (data, parameters) are validated to be finite at
    construction. Interior nodes are produced by the ops below and carry
    a backward closure until the graph they belong to is consumed by
    ``backward()``; feeding a consumed node into a new op is an error
    because its gradient path no longer exists.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _check=True):
        arr = np.asarray(data, dtype=np.float32)
        if _check and arr.size and not np.isfinite(arr).all():
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def clear_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def backward(self):
        """Backpropagate from this scalar through the recorded graph.

        Gradients accumulate by summation into every reachable tensor with
        ``requires_grad``. The traversed graph is consumed afterwards; a
        second backward without a fresh forward raises ``GraphError``.
        """
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar, got shape {self.data.shape}")
        if self._consumed:
            raise GraphError("stale graph: backward already ran; run a new forward first")

        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        interior = [n for n in topo if n._backward is not None]
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in interior:
            node._consumed = True
            node._backward = None
            node._parents = ()


def _acc(t, g):
    """Accumulate gradient g into tensor t (sum semantics)."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _node(data, parents, backward):
    """Build an op output node, recording the graph only when needed."""
    for p in parents:
        if p._consumed:
            raise GraphError("operand belongs to an already-backpropagated graph")
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents),
                      _backward=backward, _check=False)
    return Tensor(data, _check=False)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# generic ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        _acc(a, g)
        _acc(b, g)

    return _node(a.data + b.data, (a, b), backward)


def add_n(tensors):
    """Sum a list of same-shape tensors in one node."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("add_n needs at least one tensor")
    if len(tensors) == 1:
        return tensors[0]
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeError(f"add_n shape mismatch: {t.shape} vs {shape}")
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        out += t.data

    def backward(g):
        for t in tensors:
            _acc(t, g)

    return _node(out, tuple(tensors), backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)

    return _node(a.data * b.data, (a, b), backward)


def sum_all(x):
    x = _as_tensor(x)

    def backward(g):
        _acc(x, np.broadcast_to(g, x.shape).astype(np.float32))

    return _node(x.data.sum(dtype=np.float32), (x,), backward)


def reshape(x, shape):
    x = _as_tensor(x)
    orig = x.shape
    data = x.data.reshape(shape)

    def backward(g):
        _acc(x, g.reshape(orig))

    return _node(data, (x,), backward)


# ---------------------------------------------------------------------------
# pointwise


def relu(x):
    x = _as_tensor(x)

    def backward(g):
        _acc(x, g * (x.data > 0))

    return _node(np.maximum(x.data, 0), (x,), backward)


def dropout(x, rate, rng=None, mode="train"):
    """Inverted dropout: zero with probability ``rate``, scale by 1/(1-rate).

    Identity in eval mode or at rate 0. The mask comes from ``rng`` so the
    caller owns determinism.
    """
    x = _as_tensor(x)
    _check_mode(mode)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode requires an rng")
    keep = (rng.random(x.shape) >= rate)
    scale = np.float32(1.0 / (1.0 - rate))
    m = keep.astype(np.float32) * scale

    def backward(g):
        _acc(x, g * m)

    return _node(x.data * m, (x,), backward)


def _check_mode(mode):
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")


# ---------------------------------------------------------------------------
# convolution / pooling / transposed convolution


def _conv_windows(xp, kh, kw, stride):
    """Read-only strided view (N, C, kh, kw, Ho, Wo) over a padded input."""
    n, c, hp, wp = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (n, c, kh, kw, ho, wo), (sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False)


def conv2d(x, w, b, stride=1, pad=0):
    """Cross-correlation with stride and symmetric zero padding.

    Output size must be exact: (H + 2*pad - kh) divisible by stride, else
    ShapeError. Gradients flow to input, weight, and bias.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    n, cin, h, wd = x.shape
    cout, cin2, kh, kw = w.shape
    if cin != cin2:
        raise ShapeError(f"conv2d channel mismatch: input {cin}, weight {cin2}")
    if b.shape != (cout,):
        raise ShapeError(f"conv2d bias must be ({cout},), got {b.shape}")
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d needs stride >= 1 and pad >= 0, got {stride}, {pad}")
    if kh > h + 2 * pad or kw > wd + 2 * pad:
        raise ShapeError("conv2d kernel exceeds padded input")
    if (h + 2 * pad - kh) % stride or (wd + 2 * pad - kw) % stride:
        raise ShapeError(
            f"conv2d output size not exact for input {h}x{wd}, kernel {kh}x{kw}, "
            f"stride {stride}, pad {pad}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    view = _conv_windows(xp, kh, kw, stride)
    ho, wo = view.shape[4], view.shape[5]
    out = np.tensordot(view, w.data, axes=([1, 2, 3], [1, 2, 3]))  # (N, Ho, Wo, Cout)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += b.data.reshape(1, cout, 1, 1)

    def backward(g):
        _acc(b, g.sum(axis=(0, 2, 3)))
        _acc(w, np.tensordot(g, view, axes=([0, 2, 3], [0, 4, 5])))
        if x.requires_grad:
            if stride == 1 and pad <= kh - 1 and pad <= kw - 1:
                # data gradient as one correlation with the flipped kernel
                gp = np.pad(g, ((0, 0), (0, 0),
                                (kh - 1 - pad, kh - 1 - pad),
                                (kw - 1 - pad, kw - 1 - pad)))
                wf = w.data[:, :, ::-1, ::-1]
                gx = np.tensordot(_conv_windows(gp, kh, kw, 1), wf,
                                  axes=([1, 2, 3], [0, 2, 3]))
                _acc(x, np.ascontiguousarray(gx.transpose(0, 3, 1, 2)))
            else:
                gxp = np.zeros_like(xp)
                gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
                for a in range(kh):
                    ys = slice(a, a + stride * (ho - 1) + 1, stride)
                    for c in range(kw):
                        xs = slice(c, c + stride * (wo - 1) + 1, stride)
                        contrib = gt @ w.data[:, :, a, c]  # (N, Ho, Wo, Cin)
                        gxp[:, :, ys, xs] += contrib.transpose(0, 3, 1, 2)
                _acc(x, gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp)

    return _node(out, (x, w, b), backward)


def max_pool2d(x, k, stride=None):
    """Max pooling; ties route the gradient to the first max in row-major
    window order. Window arithmetic must tile the input exactly."""
    x = _as_tensor(x)
    if stride is None:
        stride = k
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d expects 4-D input, got {x.shape}")
    n, c, h, wd = x.shape
    if k < 1 or stride < 1:
        raise ValueError("max_pool2d needs k >= 1 and stride >= 1")
    if k > h or k > wd:
        raise ShapeError(f"pool window {k} exceeds input dims {h}x{wd}")
    if (h - k) % stride or (wd - k) % stride:
        raise ShapeError(f"pool arithmetic not exact: input {h}x{wd}, k {k}, stride {stride}")

    view = _conv_windows(x.data, k, k, stride)        # (N, C, k, k, Ho, Wo)
    view = view.transpose(0, 1, 4, 5, 2, 3)           # (N, C, Ho, Wo, k, k)
    ho, wo = view.shape[2], view.shape[3]
    flat = np.ascontiguousarray(view).reshape(n, c, ho, wo, k * k)
    idx = flat.argmax(axis=4)
    out = np.take_along_axis(flat, idx[..., None], axis=4)[..., 0]

    def backward(g):
        dy, dx = idx // k, idx % k
        rows = np.arange(ho).reshape(1, 1, ho, 1) * stride + dy
        cols = np.arange(wo).reshape(1, 1, 1, wo) * stride + dx
        nn = np.arange(n).reshape(n, 1, 1, 1)
        cc = np.arange(c).reshape(1, c, 1, 1)
        pos = ((nn * c + cc) * h + rows) * wd + cols
        gx = np.zeros(n * c * h * wd, dtype=np.float32)
        np.add.at(gx, pos.ravel(), g.ravel())
        _acc(x, gx.reshape(n, c, h, wd))

    return _node(out, (x,), backward)


def deconv2d(x, w, stride, pad):
    """Transposed convolution (upsampling by ``stride``).

    Weight is (Cin, Cout, 2S, 2S) with S = stride; pad must equal S // 2.
    The full scatter output has S*h + S rows per dimension and is cropped
    by ``pad`` at the leading edge and ``S - pad`` at the trailing edge, so
    the result is exactly (N, Cout, S*h, S*w). The forward equals the
    backward-data pass of conv2d with the same geometry.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"deconv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    s = stride
    if s < 1:
        raise ValueError(f"deconv2d stride must be >= 1, got {s}")
    n, cin, h, wd = x.shape
    cin2, cout, kh, kw = w.shape
    if cin != cin2:
        raise ShapeError(f"deconv2d channel mismatch: input {cin}, weight {cin2}")
    if kh != 2 * s or kw != 2 * s:
        raise ShapeError(f"deconv2d kernel must be {2*s}x{2*s} for stride {s}, got {kh}x{kw}")
    if pad != s // 2:
        raise ShapeError(f"deconv2d pad must be stride//2 = {s//2}, got {pad}")
    lead, hf, wf = pad, s * h + s, s * wd + s

    # Sub-pixel formulation: the scatter full[a + s*i, c + s*j] += x[i,j]*w[a,c]
    # regrouped by output residue (r, c) gives, per output cell (s*q + r),
    # contributions from x[q] (tap a = r) and x[q-1] (tap a = r + s); one GEMM
    # over 2x2 input windows covers every cell of the full buffer.
    xz = np.zeros((n, cin, h + 2, wd + 2), dtype=np.float32)
    xz[:, :, 1:h + 1, 1:wd + 1] = x.data
    win = _conv_windows(xz, 2, 2, 1)  # (N, Cin, 2, 2, h+1, w+1)
    a_mat = np.ascontiguousarray(win.transpose(0, 4, 5, 1, 2, 3))
    a_mat = a_mat.reshape(n * (h + 1) * (wd + 1), cin * 4)
    w6 = w.data.reshape(cin, cout, 2, s, 2, s)
    b_mat = np.ascontiguousarray(w6[:, :, ::-1, :, ::-1, :].transpose(0, 2, 4, 1, 3, 5))
    b_mat = b_mat.reshape(cin * 4, cout * s * s)
    full = (a_mat @ b_mat).reshape(n, h + 1, wd + 1, cout, s, s)
    full = np.ascontiguousarray(full.transpose(0, 3, 1, 4, 2, 5)).reshape(n, cout, hf, wf)
    out = np.ascontiguousarray(full[:, :, lead:lead + s * h, lead:lead + s * wd])

    def backward(g):
        gfull = np.zeros((n, cout, hf, wf), dtype=np.float32)
        gfull[:, :, lead:lead + s * h, lead:lead + s * wd] = g
        win2 = _conv_windows(gfull, kh, kw, s)  # (N, Cout, 2S, 2S, h, w)
        if w.requires_grad:
            _acc(w, np.tensordot(x.data, win2, axes=([0, 2, 3], [0, 4, 5])))
        if x.requires_grad:
            gx = np.tensordot(win2, w.data, axes=([1, 2, 3], [1, 2, 3]))
            _acc(x, np.ascontiguousarray(gx.transpose(0, 3, 1, 2)))

    return _node(out, (x, w), backward)


def fully_connected(x, w, b):
    """Affine layer: (N, D) @ (D, M) + (M,)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"fully_connected expects 2-D input and weight, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"fully_connected inner dim mismatch: {x.shape[1]} vs {w.shape[0]}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"fully_connected bias must be ({w.shape[1]},), got {b.shape}")

    def backward(g):
        _acc(x, g @ w.data.T)
        _acc(w, x.data.T @ g)
        _acc(b, g.sum(axis=0))

    return _node(x.data @ w.data + b.data, (x, w, b), backward)


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BatchNormState:
    """Mutable running statistics for one batch-norm layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    batches_seen: int = 0

    @classmethod
    def for_channels(cls, c):
        return cls(np.zeros(c, dtype=np.float32), np.ones(c, dtype=np.float32))


def batch_norm(x, gamma, beta, state, mode="train", eps=1e-5, momentum=0.9):
    """Per-channel batch normalization over (N, H, W).

    Train mode normalizes by batch statistics (biased variance) and folds
    them into the running buffers: the first batch copies its stats, later
    batches blend as ``momentum * old + (1 - momentum) * new``. Eval mode
    normalizes by the running stats and requires at least one prior train
    batch.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    _check_mode(mode)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects 4-D input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm gamma/beta must be ({c},)")

    gm = gamma.data.reshape(1, c, 1, 1)
    bt = beta.data.reshape(1, c, 1, 1)

    if mode == "eval":
        if state.batches_seen == 0:
            raise GraphError("batch_norm eval mode before any train-mode statistics")
        ivar = 1.0 / np.sqrt(state.running_var.reshape(1, c, 1, 1) + np.float32(eps))
        xhat = (x.data - state.running_mean.reshape(1, c, 1, 1)) * ivar

        def backward_eval(g):
            _acc(gamma, (g * xhat).sum(axis=(0, 2, 3)))
            _acc(beta, g.sum(axis=(0, 2, 3)))
            _acc(x, g * gm * ivar)

        return _node(gm * xhat + bt, (x, gamma, beta), backward_eval)

    m = x.shape[0] * x.shape[2] * x.shape[3]
    mu = x.data.mean(axis=(0, 2, 3), dtype=np.float32)
    xc = x.data - mu.reshape(1, c, 1, 1)
    var = np.mean(xc * xc, axis=(0, 2, 3), dtype=np.float32)
    ivar = (1.0 / np.sqrt(var + np.float32(eps))).reshape(1, c, 1, 1)
    xhat = xc * ivar

    if state.batches_seen == 0:
        state.running_mean = mu.copy()
        state.running_var = var.copy()
    else:
        mom = np.float32(momentum)
        state.running_mean = mom * state.running_mean + (1 - mom) * mu
        state.running_var = mom * state.running_var + (1 - mom) * var
    state.batches_seen += 1

    def backward(g):
        _acc(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        _acc(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxhat = g * gm
            gvar = (gxhat * xc).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1) * (-0.5) * ivar ** 3
            gmu = (-(gxhat * ivar).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
                   + gvar * (-2.0 / m) * xc.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1))
            _acc(x, gxhat * ivar + gvar * (2.0 / m) * xc + gmu / m)

    return _node(gm * xhat + bt, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# softmax / loss


def softmax_channels(x):
    """Numerically stable softmax across axis 1 (channels)."""
    x = _as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"softmax_channels expects a channel axis, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        _acc(x, p * (g - (g * p).sum(axis=1, keepdims=True)))

    return _node(p, (x,), backward)


def l1_loss(output, target):
    """Mean absolute error over all elements; returns a scalar tensor."""
    output, target = _as_tensor(output), _as_tensor(target)
    if output.shape != target.shape:
        raise ShapeError(f"l1_loss shape mismatch: {output.shape} vs {target.shape}")
    d = output.data - target.data
    loss = np.mean(np.abs(d), dtype=np.float32)
    if not np.isfinite(loss):
        raise NonFiniteError("l1 loss is not finite")

    def backward(g):
        coef = (g / np.float32(d.size)).astype(np.float32)
        s = np.sign(d) * coef
        _acc(output, s)
        _acc(target, -s)

    return _node(loss, (output, target), backward)
