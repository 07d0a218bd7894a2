"""Tape-free reverse-mode differentiation over numpy arrays.

Every primitive returns a :class:`Var` that remembers its parents and a
vector-Jacobian product closure. :func:`backward` walks the graph in reverse
topological order and accumulates cotangents.

Two hooks are threaded through the primitives:

* a MAC accumulator (:func:`count_macs`) that conv ops charge one unit per
  multiply-accumulate, zero for pooling and activations;
* a kink recorder (:func:`record_kinks`) that captures the active region of
  every non-smooth op (ReLU, ReLU6, max) so gradient checks can drop finite
  difference probes that cross a kink.
"""
from __future__ import annotations

import contextlib
import contextvars
import math
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateStatsError, ShapeError, UnsupportedError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Var:
    __slots__ = ("data", "grad", "parents", "vjp", "requires_grad", "name")

    def __init__(self, data, parents: Sequence["Var"] = (), vjp: Callable | None = None,
                 requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.vjp = vjp
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Var(shape={self.shape}, name={self.name!r})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul_broadcast(self, other)


def as_var(x) -> Var:
    if isinstance(x, Var):
        return x
    data = getattr(x, "data", x)  # accepts tensor.Tensor
    return Var(np.array(data, dtype=np.float64))


def _result(data, parents, vjp) -> Var:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Var(data, parents, vjp)
    return Var(data)


def backward(out: Var, cotangent=None) -> None:
    """Accumulate d<out, cotangent>/d(leaf) into ``.grad`` of every leaf that requires grad."""
    if cotangent is None:
        if out.data.size != 1:
            raise ShapeError("backward on a non-scalar output needs a cotangent")
        cotangent = np.ones_like(out.data)
    order: list[Var] = []
    seen: set[int] = set()
    stack = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads = {id(out): np.asarray(cotangent, dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.vjp is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------- hooks

_macs: contextvars.ContextVar = contextvars.ContextVar("mlrupp_macs", default=None)
_kinks: contextvars.ContextVar = contextvars.ContextVar("mlrupp_kinks", default=None)
_faults: contextvars.ContextVar = contextvars.ContextVar("mlrupp_faults", default=frozenset())


class MacCounter:
    def __init__(self):
        self.total = 0
        self.by_op: dict[str, int] = {}

    def add(self, op: str, n: int) -> None:
        self.total += int(n)
        self.by_op[op] = self.by_op.get(op, 0) + int(n)


@contextlib.contextmanager
def count_macs():
    counter = MacCounter()
    token = _macs.set(counter)
    try:
        yield counter
    finally:
        _macs.reset(token)


def _charge(op: str, n: int) -> None:
    counter = _macs.get()
    if counter is not None:
        counter.add(op, n)


@contextlib.contextmanager
def record_kinks():
    log: list[np.ndarray] = []
    token = _kinks.set(log)
    try:
        yield log
    finally:
        _kinks.reset(token)


def _kink(region: np.ndarray) -> None:
    log = _kinks.get()
    if log is not None:
        log.append(region)


@contextlib.contextmanager
def inject_fault(*ops: str):
    """Flip the sign of the named primitives' VJPs; used to prove grad checks can fail."""
    token = _faults.set(frozenset(ops) | _faults.get())
    try:
        yield
    finally:
        _faults.reset(token)


def _faulty(op: str) -> bool:
    return op in _faults.get()


# ---------------------------------------------------------------- conv helpers

def _tuple(v, n) -> tuple[int, ...]:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * n
    v = tuple(int(a) for a in v)
    if len(v) != n:
        raise ShapeError(f"expected {n} values, got {v}")
    return v


def same_padding(kernel: Sequence[int]) -> tuple[int, ...]:
    if any(k % 2 == 0 for k in kernel):
        raise UnsupportedError(f"'same' padding needs odd kernels, got {tuple(kernel)}")
    return tuple((k - 1) // 2 for k in kernel)


def _resolve_padding(padding, kernel):
    if isinstance(padding, str):
        if padding != "same":
            raise UnsupportedError(f"unknown padding {padding!r}")
        return same_padding(kernel)
    return _tuple(padding, len(kernel))


def conv_output_shape(spatial, kernel, stride, padding) -> tuple[int, ...]:
    out = []
    for n, k, s, p in zip(spatial, kernel, stride, padding):
        if k > n + 2 * p:
            raise ShapeError(f"kernel {k} larger than padded input {n + 2 * p}")
        out.append((n + 2 * p - k) // s + 1)
    return tuple(out)


def _pad(x, padding):
    if not any(padding):
        return x
    return np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in padding])


def _columns(xp, kernel, stride, out_shape):
    """[B, C, *S] padded input -> [B, C, P, K] patches (P output positions, K taps)."""
    d = len(kernel)
    win = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=tuple(range(2, 2 + d)))
    win = win[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]
    win = win[(slice(None), slice(None)) + tuple(slice(0, o) for o in out_shape)]
    B, C = xp.shape[:2]
    return win.reshape(B, C, int(np.prod(out_shape)), int(np.prod(kernel)))


def _offsets(kernel):
    return list(np.ndindex(*kernel))


def _strided(offset, stride, extent):
    return tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, extent))


def _dense_forward(x, w, stride, padding):
    kernel = w.shape[2:]
    out_shape = conv_output_shape(x.shape[2:], kernel, stride, padding)
    cols = _columns(_pad(x, padding), kernel, stride, out_shape)
    Co, Ci = w.shape[:2]
    wm = w.reshape(Co, Ci, -1)
    # per-sample products keep each sample's result independent of the batch size
    y = np.stack([np.tensordot(wm, c, axes=([1, 2], [0, 2])) for c in cols])  # [B, Co, P]
    return y.reshape((x.shape[0], Co) + out_shape), cols


def _depthwise_forward(x, w, stride, padding):
    kernel = w.shape[2:]
    out_shape = conv_output_shape(x.shape[2:], kernel, stride, padding)
    cols = _columns(_pad(x, padding), kernel, stride, out_shape)
    C = w.shape[0]
    wm = w.reshape(C, -1)
    y = np.stack([np.einsum("cpk,ck->cp", c, wm) for c in cols])
    return y.reshape(x.shape[:2] + out_shape), cols


def _dense_input_grad(g, w, x_shape, stride, padding):
    kernel = w.shape[2:]
    if all(s == 1 for s in stride):
        flipped = np.flip(w, axis=tuple(range(2, w.ndim))).swapaxes(0, 1)
        back = tuple(k - 1 - p for k, p in zip(kernel, padding))
        gx, _ = _dense_forward(g, np.ascontiguousarray(flipped), (1,) * len(kernel), back)
        return gx
    padded = tuple(n + 2 * p for n, p in zip(x_shape[2:], padding))
    gxp = np.zeros(x_shape[:2] + padded)
    out_shape = g.shape[2:]
    B, Co = g.shape[:2]
    gf = g.reshape(B, Co, -1)
    for off in _offsets(kernel):
        wo = w[(slice(None), slice(None)) + off]  # [Co, Ci]
        contrib = np.einsum("oi,bop->bip", wo, gf).reshape((B, w.shape[1]) + out_shape)
        gxp[(slice(None), slice(None)) + _strided(off, stride, out_shape)] += contrib
    crop = tuple(slice(p, p + n) for p, n in zip(padding, x_shape[2:]))
    return gxp[(slice(None), slice(None)) + crop]


def _depthwise_input_grad(g, w, x_shape, stride, padding):
    kernel = w.shape[2:]
    if all(s == 1 for s in stride):
        flipped = np.ascontiguousarray(np.flip(w, axis=tuple(range(2, w.ndim))))
        back = tuple(k - 1 - p for k, p in zip(kernel, padding))
        gx, _ = _depthwise_forward(g, flipped, (1,) * len(kernel), back)
        return gx
    padded = tuple(n + 2 * p for n, p in zip(x_shape[2:], padding))
    gxp = np.zeros(x_shape[:2] + padded)
    out_shape = g.shape[2:]
    for off in _offsets(kernel):
        wo = w[(slice(None), 0) + off]  # [C]
        gxp[(slice(None), slice(None)) + _strided(off, stride, out_shape)] += (
            g * wo.reshape((1, -1) + (1,) * len(kernel))
        )
    crop = tuple(slice(p, p + n) for p, n in zip(padding, x_shape[2:]))
    return gxp[(slice(None), slice(None)) + crop]


CONV_KINDS = ("dense", "depthwise", "pointwise")


def conv_nd(x: Var, w: Var, b: Var | None = None, stride=1, padding="same", kind: str = "dense") -> Var:
    """N-d cross-correlation.

    ``w`` is ``[C_out, C_in, *k]`` for dense/pointwise kinds and ``[C, 1, *k]``
    for depthwise. Output extents are ``(n + 2p - k) // s + 1`` per axis.
    """
    x, w = as_var(x), as_var(w)
    if kind not in CONV_KINDS:
        raise UnsupportedError(f"unknown conv kind {kind!r}")
    d = x.ndim - 2
    if w.ndim != d + 2:
        raise ShapeError(f"weight rank {w.ndim} does not match {d}-d input")
    kernel = w.shape[2:]
    stride = _tuple(stride, d)
    padding = _resolve_padding(padding, kernel)
    C = x.shape[1]
    if kind == "pointwise" and any(k != 1 for k in kernel):
        raise ShapeError(f"pointwise conv needs a 1x..x1 kernel, got {kernel}")
    if kind == "depthwise":
        if w.shape[0] != C or w.shape[1] != 1:
            raise ShapeError(f"depthwise weight {w.shape} does not match {C} channels")
        y, cols = _depthwise_forward(x.data, w.data, stride, padding)
        macs = int(np.prod(kernel)) * C
    else:
        if w.shape[1] != C:
            raise ShapeError(f"conv expects {w.shape[1]} input channels, got {C}")
        y, cols = _dense_forward(x.data, w.data, stride, padding)
        macs = int(np.prod(kernel)) * C * w.shape[0]
    _charge(f"conv_{kind}", macs * x.shape[0] * int(np.prod(y.shape[2:])))
    parents = [x, w]
    if b is not None:
        b = as_var(b)
        if b.shape != (y.shape[1],):
            raise ShapeError(f"bias shape {b.shape} does not match {y.shape[1]} outputs")
        y = y + b.data.reshape((1, -1) + (1,) * d)
        parents.append(b)
    x_shape, w_data = x.shape, w.data

    def vjp(g):
        B, Co = g.shape[:2]
        gf = g.reshape(B, Co, -1)
        gx = gw = None
        if x.requires_grad:
            if kind == "depthwise":
                gx = _depthwise_input_grad(g, w_data, x_shape, stride, padding)
            else:
                gx = _dense_input_grad(g, w_data, x_shape, stride, padding)
        if w.requires_grad:
            if kind == "depthwise":
                gw = np.einsum("bcp,bcpk->ck", gf, cols).reshape(w_data.shape)
            else:
                gw = np.tensordot(gf, cols, axes=([0, 2], [0, 2])).reshape(w_data.shape)
        grads = [gx, gw]
        if b is not None:
            grads.append(gf.sum(axis=(0, 2)))
        return grads

    return _result(y, parents, vjp)


def transposed_conv_nd(x: Var, w: Var, b: Var | None = None, stride=2, padding=0) -> Var:
    """Transposed convolution; ``w`` is ``[C_in, C_out, *k]``.

    Output extents are ``(n - 1) * s + k - 2p`` per axis.
    """
    x, w = as_var(x), as_var(w)
    d = x.ndim - 2
    if w.ndim != d + 2 or w.shape[0] != x.shape[1]:
        raise ShapeError(f"transposed conv weight {w.shape} does not match input {x.shape}")
    kernel = w.shape[2:]
    stride = _tuple(stride, d)
    padding = _tuple(padding, d)
    if any(s < 1 for s in stride):
        raise ShapeError(f"stride must be >= 1, got {stride}")
    in_shape = x.shape[2:]
    full = tuple((n - 1) * s + k for n, s, k in zip(in_shape, stride, kernel))
    out_shape = tuple(f - 2 * p for f, p in zip(full, padding))
    if any(o < 1 for o in out_shape):
        raise ShapeError(f"transposed conv geometry gives extents {out_shape}")
    B, Ci = x.shape[:2]
    Co = w.shape[1]
    xf = x.data.reshape(B, Ci, -1)
    yfull = np.zeros((B, Co) + full)
    for off in _offsets(kernel):
        wo = w.data[(slice(None), slice(None)) + off]  # [Ci, Co]
        contrib = np.stack([wo.T @ xb for xb in xf]).reshape((B, Co) + in_shape)
        yfull[(slice(None), slice(None)) + _strided(off, stride, in_shape)] += contrib
    crop = (slice(None), slice(None)) + tuple(slice(p, p + o) for p, o in zip(padding, out_shape))
    y = yfull[crop]
    _charge("conv_transposed", int(np.prod(kernel)) * Ci * Co * B * int(np.prod(in_shape)))
    parents = [x, w]
    if b is not None:
        b = as_var(b)
        y = y + b.data.reshape((1, -1) + (1,) * d)
        parents.append(b)
    w_data = w.data

    def vjp(g):
        gfull = np.zeros((B, Co) + full)
        gfull[crop] = g
        gx = np.zeros((B, Ci, int(np.prod(in_shape))))
        gw = np.zeros_like(w_data)
        for off in _offsets(kernel):
            gs = gfull[(slice(None), slice(None)) + _strided(off, stride, in_shape)].reshape(B, Co, -1)
            gx += np.einsum("io,bop->bip", w_data[(slice(None), slice(None)) + off], gs)
            gw[(slice(None), slice(None)) + off] = np.einsum("bip,bop->io", xf, gs)
        grads = [gx.reshape(x.shape), gw]
        if b is not None:
            grads.append(g.sum(axis=(0,) + tuple(range(2, g.ndim))))
        return grads

    return _result(y, parents, vjp)


# ---------------------------------------------------------------- pooling

def adaptive_avg_pool(x: Var) -> Var:
    """Global average pool: ``[B, C, *S] -> [B, C, 1, ...]``."""
    x = as_var(x)
    axes = tuple(range(2, x.ndim))
    n = int(np.prod(x.shape[2:]))
    y = x.data.mean(axis=axes, keepdims=True)
    return _result(y, [x], lambda g: [np.broadcast_to(g / n, x.shape).copy()])


def global_max_pool(x: Var) -> Var:
    """Global max pool; the gradient goes to the first (lowest flat index) maximiser."""
    x = as_var(x)
    B, C = x.shape[:2]
    flat = x.data.reshape(B, C, -1)
    idx = flat.argmax(axis=2)
    _kink(idx)
    y = np.take_along_axis(flat, idx[..., None], axis=2).reshape((B, C) + (1,) * (x.ndim - 2))

    def vjp(g):
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, idx[..., None], g.reshape(B, C, 1), axis=2)
        return [gx.reshape(x.shape)]

    return _result(y, [x], vjp)


def channel_stats_pool(x: Var) -> Var:
    """Per-position channel mean and max stacked as 2 channels: ``[B, 2, *S]``."""
    x = as_var(x)
    C = x.shape[1]
    mean = x.data.mean(axis=1, keepdims=True)
    idx = x.data.argmax(axis=1)[:, None]  # first maximiser on ties
    _kink(idx)
    mx = np.take_along_axis(x.data, idx, axis=1)
    y = np.concatenate([mean, mx], axis=1)

    def vjp(g):
        gx = np.broadcast_to(g[:, :1] / C, x.shape).copy()
        contrib = np.zeros_like(x.data)
        np.put_along_axis(contrib, idx, g[:, 1:2], axis=1)
        return [gx + contrib]

    return _result(y, [x], vjp)


# ---------------------------------------------------------------- normalisation

def batch_norm(x: Var, gamma: Var, beta: Var, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, eps: float = BN_EPS, momentum: float = BN_MOMENTUM) -> Var:
    """Per-channel batch norm.

    In train mode batch statistics are used (biased variance) and the running
    buffers are updated in place with the unbiased variance. Eval mode uses the
    running buffers.
    """
    x, gamma, beta = as_var(x), as_var(gamma), as_var(beta)
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"gamma/beta must have shape ({C},)")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, C) + (1,) * (x.ndim - 2)
    n = x.data.size // C
    if training:
        if n < 2:
            raise DegenerateStatsError(
                f"batch norm in train mode needs >= 2 values per channel, got {n}"
            )
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * n / (n - 1)
    else:
        mean, var = running_mean.copy(), running_var.copy()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(bshape)) * inv.reshape(bshape)
    y = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)
    g_data = gamma.data

    def vjp(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * g_data.reshape(bshape)
        if training:
            gx = (inv.reshape(bshape) / n) * (
                n * gxhat
                - gxhat.sum(axis=axes).reshape(bshape)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape)
            )
        else:
            gx = gxhat * inv.reshape(bshape)
        return [gx, ggamma, gbeta]

    return _result(y, [x, gamma, beta], vjp)


# ---------------------------------------------------------------- activations

def relu(x: Var) -> Var:
    x = as_var(x)
    mask = x.data > 0  # derivative 0 at exactly 0
    _kink(mask)
    return _result(np.where(mask, x.data, 0.0), [x], lambda g: [g * mask])


def relu6(x: Var) -> Var:
    x = as_var(x)
    region = np.where(x.data <= 0, 0, np.where(x.data >= 6, 2, 1)).astype(np.int8)
    _kink(region)
    y = np.clip(x.data, 0.0, 6.0)
    return _result(y, [x], lambda g: [g * (region == 1)])


def sigmoid(x: Var) -> Var:
    x = as_var(x)
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    y[~pos] = e / (1.0 + e)
    sign = -1.0 if _faulty("sigmoid") else 1.0
    return _result(y, [x], lambda g: [sign * g * y * (1.0 - y)])


# ---------------------------------------------------------------- structure

def shuffle_permutation(channels: int, groups: int) -> np.ndarray:
    """Output channel j takes input channel perm[j]: (groups, C/groups) transposed."""
    if groups < 1 or channels % groups:
        raise ShapeError(f"{channels} channels not divisible by {groups} groups")
    return np.arange(channels).reshape(groups, channels // groups).T.reshape(-1)


def channel_shuffle(x: Var, groups: int) -> Var:
    x = as_var(x)
    perm = shuffle_permutation(x.shape[1], groups)
    inverse = np.argsort(perm)
    return _result(x.data[:, perm], [x], lambda g: [g[:, inverse]])


def channel_unshuffle(x: Var, groups: int) -> Var:
    x = as_var(x)
    perm = shuffle_permutation(x.shape[1], groups)
    inverse = np.argsort(perm)
    return _result(x.data[:, inverse], [x], lambda g: [g[:, perm]])


def _unbroadcast(g, shape):
    axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, shape)) if b == 1 and a != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


def add(x: Var, y: Var) -> Var:
    x, y = as_var(x), as_var(y)
    if x.shape != y.shape:
        raise ShapeError(f"add needs equal shapes, got {x.shape} and {y.shape}")
    return _result(x.data + y.data, [x, y], lambda g: [g, g])


def mul_broadcast(x: Var, a: Var) -> Var:
    """``x * a`` where ``a`` is ``[B, C, 1, ...]``, ``[B, 1, *S]`` or ``x``'s shape."""
    x, a = as_var(x), as_var(a)
    if a.ndim != x.ndim or a.shape[0] != x.shape[0] or any(
        m not in (1, n) for m, n in zip(a.shape[1:], x.shape[1:])
    ):
        raise ShapeError(f"cannot broadcast {a.shape} against {x.shape}")
    xd, ad = x.data, a.data
    return _result(xd * ad, [x, a], lambda g: [g * ad, _unbroadcast(g * xd, ad.shape)])


def scale(x: Var, c: float) -> Var:
    x = as_var(x)
    return _result(x.data * c, [x], lambda g: [g * c])


def sum_all(x: Var) -> Var:
    x = as_var(x)
    return _result(np.array(x.data.sum()), [x], lambda g: [np.broadcast_to(g, x.shape).copy()])


def dot(x: Var, c: np.ndarray) -> Var:
    """Scalar ``<x, c>`` for a constant array ``c``."""
    x = as_var(x)
    c = np.asarray(c, dtype=np.float64)
    return _result(np.array(float(np.vdot(x.data, c))), [x], lambda g: [g * c])


# ---------------------------------------------------------------- segmentation loss

def softmax(z: np.ndarray, axis: int = 1) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def seg_loss_logits(logits: Var, onehot: np.ndarray, variant: str = "normalized") -> Var:
    """Soft Dice + cross-entropy on ``softmax(logits)`` over the class axis.

    ``normalized``: ``1 - mean_i dice_i + CE / V``.
    ``printed``: ``1 - sum_i dice_i - sum_{v,i} Y log P`` (unnormalised form).
    Dice and CE sums run over every voxel in the batch; ``V`` counts them.
    """
    logits = as_var(logits)
    Y = np.asarray(onehot, dtype=np.float64)
    if Y.shape != logits.shape:
        raise ShapeError(f"target {Y.shape} does not match logits {logits.shape}")
    if variant not in ("normalized", "printed"):
        raise ValueError(f"unknown loss variant {variant!r}")
    I = Y.shape[1]
    V = Y.size // I
    axes = (0,) + tuple(range(2, Y.ndim))
    P = softmax(logits.data, axis=1)
    logP = logits.data - logits.data.max(axis=1, keepdims=True)
    logP = logP - np.log(np.exp(logP).sum(axis=1, keepdims=True))
    num = 2.0 * (Y * P).sum(axis=axes)
    den = (Y * Y + P * P).sum(axis=axes)
    dice = num / den
    ce = -(Y * logP).sum()
    if variant == "normalized":
        dice_w, ce_w = 1.0 / I, 1.0 / V
    else:
        dice_w, ce_w = 1.0, 1.0
    loss = 1.0 - dice_w * dice.sum() + ce_w * ce
    bshape = (1, I) + (1,) * (Y.ndim - 2)

    def vjp(g):
        # d dice_i / dP = 2Y/den - num * 2P / den^2
        gP = -dice_w * (2.0 * Y / den.reshape(bshape) - num.reshape(bshape) * 2.0 * P / (den ** 2).reshape(bshape))
        gz = P * (gP - (gP * P).sum(axis=1, keepdims=True))
        # CE through log-softmax: d(-sum Y log P)/dz = P * sum_c Y_c - Y
        gz += ce_w * (P * Y.sum(axis=1, keepdims=True) - Y)
        return [g * gz]

    return _result(np.array(loss), [logits], vjp)


def finite(x: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(x)))


def isclose_rel(a: float, b: float, tol: float) -> bool:
    return abs(a - b) / max(1.0, abs(a)) <= tol if math.isfinite(a) and math.isfinite(b) else False
