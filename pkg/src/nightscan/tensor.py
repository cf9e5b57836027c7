"""Dense real tensors with taped reverse-mode autodiff on a numpy substrate.

Every primitive records one tape entry at construction time (creation order
doubles as a topological order, since inputs must exist before the op that
consumes them).  ``backward`` replays entries strictly in reverse creation
order and accumulates gradients additively across fan-out, so repeated runs
on identical inputs produce bit-identical values and gradients.

Forward results are checked for NaN/Inf: a non-finite value on finite inputs
is a contract violation and raises ``NumericError`` instead of propagating.

All primitives here have hand-derived analytic backwards; reductions use a
fixed order so results stay bit-stable.  ``sum_list`` and the direction
merge in ``multi_scatter`` reduce pairwise (a fixed balanced tree), which
keeps sums of k identical arrays exact for power-of-two k.
"""

from __future__ import annotations

import itertools
import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf as _erf
from scipy.special import expit as _expit

from .errors import ConfigError, ContractError, DimensionError, NumericError

DEFAULT_DTYPE = np.float64

_node_ids = itertools.count()
_grad_enabled = True
_mac_counters: list[dict] = []

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / optimizer updates)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextmanager
def track_macs():
    """Count multiply-accumulates of conv/matmul/scan ops run inside the block."""
    box = {"macs": 0}
    _mac_counters.append(box)
    try:
        yield box
    finally:
        _mac_counters.remove(box)


def _add_macs(n):
    for box in _mac_counters:
        box["macs"] += int(n)


class Tensor:
    """A dense real array with an optional gradient slot.

    ``data`` is always a float32 or float64 ndarray.  ``grad`` has the same
    shape as ``data`` once populated by ``backward``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_nid")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None
        self._nid = next(_node_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite value produced by {op}")


def _record(data, parents, backward_fn, op):
    """Create the output tensor of a primitive and record its tape entry."""
    _check_finite(data, op)
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = np.reshape(g, t.data.shape)
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g.astype(t.data.dtype, copy=False)


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(root):
    """Populate ``grad`` for every gradient-requiring tensor that feeds ``root``.

    ``root`` must be a scalar.  Entries replay in reverse creation order,
    each exactly once; accumulation across fan-out is additive.
    """
    if not isinstance(root, Tensor):
        raise ContractError("backward root must be a Tensor")
    if root.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        raise ContractError("backward root has no gradient-requiring inputs (empty tape)")

    nodes = []
    seen = {id(root)}
    stack = [root]
    while stack:
        node = stack.pop()
        nodes.append(node)
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
    nodes.sort(key=lambda n: n._nid, reverse=True)

    root.grad = np.ones_like(root.data)
    for node in nodes:
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _as_const(x, ref_dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref_dtype))


def add(a, b):
    b = _as_const(b, a.dtype)

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _record(a.data + b.data, (a, b), bwd, "add")


def sub(a, b):
    b = _as_const(b, a.dtype)

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _record(a.data - b.data, (a, b), bwd, "sub")


def mul(a, b):
    b = _as_const(b, a.dtype)
    ad, bd = a.data, b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g * bd, ad.shape))
        _accumulate(b, _unbroadcast(g * ad, bd.shape))

    return _record(ad * bd, (a, b), bwd, "mul")


def neg(a):
    def bwd(g):
        _accumulate(a, -g)

    return _record(-a.data, (a,), bwd, "neg")


def scale(a, s):
    """Multiply by a python scalar without promoting the dtype."""
    s = float(s)

    def bwd(g):
        _accumulate(a, g * s)

    return _record(a.data * s, (a,), bwd, "scale")


def exp(a):
    out_data = np.exp(a.data)

    def bwd(g):
        _accumulate(a, g * out_data)

    return _record(out_data, (a,), bwd, "exp")


def absolute(a):
    sign = np.sign(a.data)

    def bwd(g):
        _accumulate(a, g * sign)

    return _record(np.abs(a.data), (a,), bwd, "absolute")


# ---------------------------------------------------------------------------
# activations


def relu(a):
    mask = a.data > 0

    def bwd(g):
        _accumulate(a, g * mask)

    return _record(np.where(mask, a.data, 0.0), (a,), bwd, "relu")


def sigmoid(a):
    s = _expit(a.data)

    def bwd(g):
        _accumulate(a, g * (s * (1.0 - s)))

    return _record(s, (a,), bwd, "sigmoid")


def silu(a):
    s = _expit(a.data)
    x = a.data

    def bwd(g):
        _accumulate(a, g * (s * (1.0 + x * (1.0 - s))))

    return _record(x * s, (a,), bwd, "silu")


def gelu(a):
    """Exact Gaussian-CDF form: x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))

    def bwd(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        _accumulate(a, g * (cdf + x * pdf))

    return _record(x * cdf, (a,), bwd, "gelu")


def softplus(a):
    x = a.data

    def bwd(g):
        _accumulate(a, g * _expit(x))

    return _record(np.logaddexp(0.0, x), (a,), bwd, "softplus")


# ---------------------------------------------------------------------------
# reductions and simple structure ops


def mean(a):
    n = a.data.size

    def bwd(g):
        _accumulate(a, np.broadcast_to(g / n, a.data.shape))

    return _record(np.asarray(a.data.mean(), dtype=a.dtype), (a,), bwd, "mean")


def sum_all(a):
    def bwd(g):
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return _record(np.asarray(a.data.sum(), dtype=a.dtype), (a,), bwd, "sum_all")


def sum_list(tensors):
    """Sum same-shape tensors with a fixed pairwise (balanced-tree) reduction."""
    if not tensors:
        raise ContractError("sum_list needs at least one tensor")
    shape = tensors[0].data.shape
    for t in tensors:
        if t.data.shape != shape:
            raise DimensionError(f"sum_list shape mismatch: {t.data.shape} vs {shape}")

    def bwd(g):
        for t in tensors:
            _accumulate(t, g)

    return _record(_tree_sum([t.data for t in tensors]), tuple(tensors), bwd, "sum_list")


def _tree_sum(arrays):
    arrays = list(arrays)
    while len(arrays) > 1:
        nxt = []
        for i in range(0, len(arrays), 2):
            if i + 1 < len(arrays):
                nxt.append(arrays[i] + arrays[i + 1])
            else:
                nxt.append(arrays[i])
        arrays = nxt
    return arrays[0]


def mean_over_channels(a):
    """Mean over axis 0, keepdim: (C, ...) -> (1, ...)."""
    c = a.data.shape[0]

    def bwd(g):
        _accumulate(a, np.broadcast_to(g / c, a.data.shape))

    return _record(a.data.mean(axis=0, keepdims=True), (a,), bwd, "mean_over_channels")


def global_avg_pool(a):
    """Spatial mean: (C, H, W) -> (C,)."""
    if a.data.ndim != 3:
        raise DimensionError(f"global_avg_pool expects (C, H, W), got {a.data.shape}")
    n = a.data.shape[1] * a.data.shape[2]

    def bwd(g):
        _accumulate(a, np.broadcast_to(g[:, None, None] / n, a.data.shape))

    return _record(a.data.mean(axis=(1, 2)), (a,), bwd, "global_avg_pool")


def concat_channels(tensors):
    """Concatenate along axis 0."""
    sizes = [t.data.shape[0] for t in tensors]
    base = tensors[0].data.shape[1:]
    for t in tensors:
        if t.data.shape[1:] != base:
            raise DimensionError("concat_channels trailing dims differ")

    def bwd(g):
        off = 0
        for t, s in zip(tensors, sizes):
            _accumulate(t, g[off:off + s])
            off += s

    return _record(np.concatenate([t.data for t in tensors], axis=0), tuple(tensors), bwd, "concat_channels")


def narrow_channels(a, start, length):
    """Slice [start, start+length) along axis 0."""
    if start < 0 or start + length > a.data.shape[0]:
        raise DimensionError(f"narrow [{start}:{start + length}) out of range for {a.data.shape}")

    def bwd(g):
        full = np.zeros_like(a.data)
        full[start:start + length] = g
        _accumulate(a, full)

    return _record(a.data[start:start + length], (a,), bwd, "narrow_channels")


def chunk2(a):
    """Split axis 0 in half; width must be even."""
    c = a.data.shape[0]
    if c % 2 != 0:
        raise ConfigError(f"chunk2 needs an even channel count, got {c}")
    return narrow_channels(a, 0, c // 2), narrow_channels(a, c // 2, c // 2)


def reshape(a, shape):
    shape = tuple(shape)

    def bwd(g):
        _accumulate(a, np.reshape(g, a.data.shape))

    return _record(np.reshape(a.data, shape), (a,), bwd, "reshape")


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _accumulate(a, np.transpose(g, inv))

    return _record(np.transpose(a.data, axes), (a,), bwd, "transpose")


def strided_downsample(a, stride):
    """Keep every ``stride``-th pixel along both spatial axes of (C, H, W)."""
    if a.data.ndim != 3:
        raise DimensionError(f"strided_downsample expects (C, H, W), got {a.data.shape}")

    def bwd(g):
        full = np.zeros_like(a.data)
        full[:, ::stride, ::stride] = g
        _accumulate(a, full)

    return _record(a.data[:, ::stride, ::stride], (a,), bwd, "strided_downsample")


def scale_by_channel(a, s):
    """Scale (C, H, W) by a per-channel vector (C,)."""
    return mul(a, reshape(s, (s.data.shape[0], 1, 1)))


def nearest_upsample(a, factor):
    """Repeat every pixel of (C, H, W) into a factor x factor block."""
    if a.data.ndim != 3:
        raise DimensionError(f"nearest_upsample expects (C, H, W), got {a.data.shape}")
    c, h, w = a.data.shape
    out = np.repeat(np.repeat(a.data, factor, axis=1), factor, axis=2)

    def bwd(g):
        _accumulate(a, g.reshape(c, h, factor, w, factor).sum(axis=(2, 4)))

    return _record(out, (a,), bwd, "nearest_upsample")


def pixel_shuffle(a, r):
    """(C*r*r, h, w) -> (C, h*r, w*r); channel c*r*r + i*r + j lands at subpixel (i, j)."""
    cr2, h, w = a.data.shape
    if cr2 % (r * r) != 0:
        raise DimensionError(f"pixel_shuffle: {cr2} channels not divisible by r^2={r * r}")
    c = cr2 // (r * r)
    t = reshape(a, (c, r, r, h, w))
    t = transpose(t, (0, 3, 1, 4, 2))
    return reshape(t, (c, h * r, w * r))


# ---------------------------------------------------------------------------
# matmul / normalization


def matmul(a, b):
    """Batched matrix product with numpy broadcasting on leading axes."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError("matmul operands must have ndim >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out_data = np.matmul(a.data, b.data)
    batch = int(np.prod(out_data.shape[:-2])) if out_data.ndim > 2 else 1
    _add_macs(batch * out_data.shape[-2] * out_data.shape[-1] * a.data.shape[-1])

    def bwd(g):
        _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape))
        _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape))

    return _record(out_data, (a, b), bwd, "matmul")


LAYER_NORM_EPS = 1e-5


def layer_norm(a, gamma, beta, eps=LAYER_NORM_EPS):
    """Normalize over the channel axis (axis 0) per spatial location."""
    x = a.data
    c = x.shape[0]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError("layer_norm affine params must be shaped (C,)")
    mu = x.mean(axis=0)
    var = x.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    bshape = (c,) + (1,) * (x.ndim - 1)
    gam = gamma.data.reshape(bshape)

    def bwd(g):
        reduce_axes = tuple(range(1, x.ndim))
        _accumulate(gamma, (g * xhat).sum(axis=reduce_axes))
        _accumulate(beta, g.sum(axis=reduce_axes))
        gx_hat = g * gam
        term = gx_hat - gx_hat.mean(axis=0) - xhat * (gx_hat * xhat).mean(axis=0)
        _accumulate(a, inv_std * term)

    return _record(xhat * gam + beta.data.reshape(bshape), (a, gamma, beta), bwd, "layer_norm")


# ---------------------------------------------------------------------------
# convolution


_COL2IM_CACHE = {}


def _im2col(arr, k, stride, pad):
    c, h, w = arr.shape
    if pad:
        arr = np.pad(arr, ((0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(arr, (k, k), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    ho, wo = windows.shape[1], windows.shape[2]
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)
    return np.ascontiguousarray(cols), ho, wo


def _col2im_indices(c, h, w, k, stride, pad):
    key = (c, h, w, k, stride, pad)
    cached = _COL2IM_CACHE.get(key)
    if cached is not None:
        return cached
    hp, wp = h + 2 * pad, w + 2 * pad
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    ci = np.arange(c)[:, None, None, None, None]
    ki = np.arange(k)[None, :, None, None, None]
    kj = np.arange(k)[None, None, :, None, None]
    oi = np.arange(ho)[None, None, None, :, None]
    oj = np.arange(wo)[None, None, None, None, :]
    flat = ci * (hp * wp) + (oi * stride + ki) * wp + (oj * stride + kj)
    out = (flat.ravel(), hp, wp, ho, wo)
    _COL2IM_CACHE[key] = out
    return out


def _col2im(cols, shape, k, stride, pad):
    """Scatter-add columns back onto a (C, H, W) grid (inverse of _im2col)."""
    c, h, w = shape
    idx, hp, wp, _, _ = _col2im_indices(c, h, w, k, stride, pad)
    acc = np.bincount(idx, weights=cols.ravel(), minlength=c * hp * wp)
    acc = acc.reshape(c, hp, wp)
    if pad:
        acc = acc[:, pad:pad + h, pad:pad + w]
    return acc.astype(cols.dtype, copy=False)


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D cross-correlation (no kernel flip): (C_in, H, W) -> (C_out, H', W')."""
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise DimensionError(f"conv2d expects (C,H,W) and (Co,Ci,k,k), got {x.data.shape}, {w.data.shape}")
    co, ci, kh, kw = w.data.shape
    if kh != kw:
        raise ConfigError("conv2d kernels must be square")
    if kh % 2 != 1:
        raise ConfigError(f"conv2d kernel size must be odd, got {kh}")
    if stride not in (1, 2):
        raise ConfigError(f"conv2d stride must be 1 or 2, got {stride}")
    if ci != x.data.shape[0]:
        raise DimensionError(f"conv2d input channels {x.data.shape[0]} != weight {ci}")
    if b is not None and b.data.shape != (co,):
        raise DimensionError("conv2d bias must be shaped (C_out,)")

    k = kh
    cols, ho, wo = _im2col(x.data, k, stride, padding)
    wmat = w.data.reshape(co, ci * k * k)
    out = wmat @ cols
    if b is not None:
        out = out + b.data[:, None]
    out = out.reshape(co, ho, wo)
    _add_macs(co * ci * k * k * ho * wo)

    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        gm = g.reshape(co, ho * wo)
        if b is not None:
            _accumulate(b, g.sum(axis=(1, 2)))
        _accumulate(w, (gm @ cols.T).reshape(w.data.shape))
        if x.requires_grad:
            dcols = wmat.T @ gm
            _accumulate(x, _col2im(dcols, x.data.shape, k, stride, padding))

    return _record(out, parents, bwd, "conv2d")


def conv_transpose2d(x, w, b=None, stride=1, padding=0):
    """Transposed conv: (C_in, H, W) with weight (C_in, C_out, k, k)."""
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise DimensionError(f"conv_transpose2d expects (C,H,W) and (Ci,Co,k,k), got {x.data.shape}, {w.data.shape}")
    ci, co, kh, kw = w.data.shape
    if kh != kw:
        raise ConfigError("conv_transpose2d kernels must be square")
    if ci != x.data.shape[0]:
        raise DimensionError(f"conv_transpose2d input channels {x.data.shape[0]} != weight {ci}")
    k = kh
    h, w_in = x.data.shape[1], x.data.shape[2]
    ho = (h - 1) * stride + k - 2 * padding
    wo = (w_in - 1) * stride + k - 2 * padding
    if ho < 1 or wo < 1:
        raise DimensionError("conv_transpose2d output would be empty")

    xmat = x.data.reshape(ci, h * w_in)
    wmat = w.data.reshape(ci, co * k * k)
    cols = wmat.T @ xmat
    out = _col2im(cols, (co, ho, wo), k, stride, padding)
    if b is not None:
        out = out + b.data[:, None, None]
    _add_macs(ci * co * k * k * h * w_in)

    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        gcols, gho, gwo = _im2col(g, k, stride, padding)
        if (gho, gwo) != (h, w_in):
            raise DimensionError("conv_transpose2d backward geometry mismatch")
        if b is not None:
            _accumulate(b, g.sum(axis=(1, 2)))
        _accumulate(w, (xmat @ gcols.T).reshape(w.data.shape))
        if x.requires_grad:
            _accumulate(x, (wmat @ gcols).reshape(x.data.shape))

    return _record(out, parents, bwd, "conv_transpose2d")


# ---------------------------------------------------------------------------
# permutation ops (last-axis gathers used by the directional scans)


def gather_permute(a, order, inverse):
    """Permute the last axis: out[..., k] = a[..., order[k]]."""
    if order.shape[0] != a.data.shape[-1]:
        raise DimensionError(f"order length {order.shape[0]} != last axis {a.data.shape[-1]}")

    def bwd(g):
        _accumulate(a, np.take(g, inverse, axis=-1))

    return _record(np.take(a.data, order, axis=-1), (a,), bwd, "gather_permute")


def scatter_inverse(a, order, inverse):
    """Inverse of gather_permute: out[..., order[k]] = a[..., k]."""
    if order.shape[0] != a.data.shape[-1]:
        raise DimensionError(f"order length {order.shape[0]} != last axis {a.data.shape[-1]}")

    def bwd(g):
        _accumulate(a, np.take(g, order, axis=-1))

    return _record(np.take(a.data, inverse, axis=-1), (a,), bwd, "scatter_inverse")


def multi_gather(a, orders, inverses):
    """Expand (C, L) into per-direction sequences (K, C, L), one permutation each."""
    if a.data.ndim != 2:
        raise DimensionError(f"multi_gather expects (C, L), got {a.data.shape}")
    if orders.shape[1] != a.data.shape[1]:
        raise DimensionError(f"order length {orders.shape[1]} != L={a.data.shape[1]}")
    out = a.data[:, orders].transpose(1, 0, 2)

    def bwd(g):
        parts = [np.take(g[i], inverses[i], axis=-1) for i in range(orders.shape[0])]
        _accumulate(a, _tree_sum(parts))

    return _record(np.ascontiguousarray(out), (a,), bwd, "multi_gather")


def multi_scatter(a, orders, inverses):
    """Un-permute per-direction sequences (K, C, L) and sum over K (fixed tree order)."""
    if a.data.ndim != 3:
        raise DimensionError(f"multi_scatter expects (K, C, L), got {a.data.shape}")
    if orders.shape[0] != a.data.shape[0] or orders.shape[1] != a.data.shape[2]:
        raise DimensionError(f"orders {orders.shape} incompatible with {a.data.shape}")
    parts = [np.take(a.data[i], inverses[i], axis=-1) for i in range(orders.shape[0])]

    def bwd(g):
        stacked = np.stack([np.take(g, orders[i], axis=-1) for i in range(orders.shape[0])])
        _accumulate(a, stacked)

    return _record(_tree_sum(parts), (a,), bwd, "multi_scatter")
