"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray together with an optional gradient buffer. Every
differentiable op records an entry on a module-level tape; backward() replays
the tape in reverse execution order (which is already a valid topological
order) and accumulates gradients into any tensor on the path to the loss.

Training runs in float32 by default. Verification code can switch the whole
module to float64 with float64_scope() for tight finite-difference checks.

Broadcasting is deliberately restricted: binary ops accept two tensors of
identical shape, or a tensor and a python scalar. Anything that needs a mask
or a channel expansion goes through repeat_channels explicitly.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32

# Names of every differentiable op that records tape entries. The gradient
# check registry is validated against this set, so adding an op here without
# a finite-difference case fails the verification suite.
DIFFERENTIABLE_OPS: set[str] = set()


def _diffop(name: str):
    DIFFERENTIABLE_OPS.add(name)

    def deco(fn):
        return fn

    return deco


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(name: str) -> None:
    global _DEFAULT_DTYPE
    if name == "float32":
        _DEFAULT_DTYPE = np.float32
    elif name == "float64":
        _DEFAULT_DTYPE = np.float64
    else:
        raise ValueError(f"unsupported dtype {name!r}, expected float32 or float64")


@contextlib.contextmanager
def float64_scope():
    """Run the enclosed block with float64 as the tensor dtype."""
    prev = _DEFAULT_DTYPE
    set_default_dtype("float64")
    try:
        yield
    finally:
        set_default_dtype("float32" if prev == np.float32 else "float64")


class TapeEntry:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of ops; execution order is the topological order."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def clear(self) -> None:
        self.entries.clear()

    def __len__(self) -> int:
        return len(self.entries)


_tape = Tape()
_grad_enabled = True


def active_tape() -> Tape:
    return _tape


class no_grad(contextlib.ContextDecorator):
    """Disable tape recording inside the block."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, np.ndarray) and data.dtype == _DEFAULT_DTYPE:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        # Shares storage; gradient tracking is severed.
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return rsub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return rdiv(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, wrt: tuple, backward: Callable) -> Tensor:
    if _grad_enabled and any(t.requires_grad for t in wrt):
        out.requires_grad = True
        _tape.entries.append(TapeEntry(wrt, out, backward))
    return out


def _accumulate(t: Tensor, g) -> None:
    if g is None or not t.requires_grad:
        return
    if g.shape != t.data.shape:
        raise RuntimeError(f"gradient shape {g.shape} does not match tensor shape {t.data.shape}")
    if t.grad is None:
        t.grad = g if g.flags.owndata and g.flags.writeable else g.copy()
    else:
        t.grad = t.grad + g


def backward(loss: Tensor, retain_tape: bool = False) -> None:
    """Reverse sweep from a scalar loss, accumulating .grad on the path."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not require grad; nothing to differentiate")
    loss.grad = np.ones_like(loss.data)
    entries = _tape.entries
    for i in range(len(entries) - 1, -1, -1):
        entry = entries[i]
        g = entry.output.grad
        if g is not None:
            grads = entry.backward(g)
            for t, gt in zip(entry.inputs, grads):
                _accumulate(t, gt)
        if not retain_tape:
            entries[i] = None  # free activations as the sweep proceeds
    if not retain_tape:
        _tape.entries.clear()


def clear_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _check_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} differ; only identical shapes or tensor-vs-scalar are allowed")


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float)) or (isinstance(x, np.ndarray) and x.ndim == 0)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

@_diffop("add")
def add(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        out = Tensor(a.data + _DEFAULT_DTYPE(b))
        return _record(out, (a,), lambda g: (g,))
    b = as_tensor(b)
    _check_same_shape(a.data, b.data, "add")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


@_diffop("sub")
def sub(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        out = Tensor(a.data - _DEFAULT_DTYPE(b))
        return _record(out, (a,), lambda g: (g,))
    b = as_tensor(b)
    _check_same_shape(a.data, b.data, "sub")
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (g, -g))


@_diffop("rsub")
def rsub(a: Tensor, s) -> Tensor:
    out = Tensor(_DEFAULT_DTYPE(s) - a.data)
    return _record(out, (a,), lambda g: (-g,))


@_diffop("mul")
def mul(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        s = _DEFAULT_DTYPE(b)
        out = Tensor(a.data * s)
        return _record(out, (a,), lambda g: (g * s,))
    b = as_tensor(b)
    _check_same_shape(a.data, b.data, "mul")
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data
    return _record(out, (a, b), lambda g: (g * bd, g * ad))


@_diffop("div")
def div(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        s = _DEFAULT_DTYPE(1.0) / _DEFAULT_DTYPE(b)
        out = Tensor(a.data * s)
        return _record(out, (a,), lambda g: (g * s,))
    b = as_tensor(b)
    _check_same_shape(a.data, b.data, "div")
    out = Tensor(a.data / b.data)
    bd, od = b.data, out.data
    return _record(out, (a, b), lambda g: (g / bd, -g * od / bd))


@_diffop("rdiv")
def rdiv(a: Tensor, s) -> Tensor:
    out = Tensor(_DEFAULT_DTYPE(s) / a.data)
    ad, od = a.data, out.data
    return _record(out, (a,), lambda g: (-g * od / ad,))


@_diffop("neg")
def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


@_diffop("abs")
def tabs(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data))
    sign = np.sign(a.data)
    return _record(out, (a,), lambda g: (g * sign,))


@_diffop("exp")
def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))
    od = out.data
    return _record(out, (a,), lambda g: (g * od,))


@_diffop("tanh")
def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data))
    od = out.data
    return _record(out, (a,), lambda g: (g * (1.0 - od * od),))


@_diffop("sigmoid")
def sigmoid(a: Tensor) -> Tensor:
    # exp formulation split by sign for float stability
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    out = Tensor(out_data)
    od = out.data
    return _record(out, (a,), lambda g: (g * od * (1.0 - od),))


@_diffop("relu")
def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    mask = a.data > 0
    return _record(out, (a,), lambda g: (g * mask,))


@_diffop("leaky_relu")
def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    s = _DEFAULT_DTYPE(slope)
    out = Tensor(np.where(a.data > 0, a.data, a.data * s))
    scale = np.where(a.data > 0, _DEFAULT_DTYPE(1.0), s)
    return _record(out, (a,), lambda g: (g * scale,))


@_diffop("clamp")
def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out = Tensor(np.clip(a.data, lo, hi))
    inside = (a.data >= lo) & (a.data <= hi)
    return _record(out, (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _reduced_count(shape, axis) -> int:
    if axis is None:
        return int(np.prod(shape)) if shape else 1
    if isinstance(axis, int):
        axis = (axis,)
    n = 1
    for ax in axis:
        n *= shape[ax]
    return n


def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if not keepdims:
        if axis is None:
            g = g.reshape((1,) * len(shape))
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            kshape = list(shape)
            for ax in axes:
                kshape[ax] = 1
            g = g.reshape(kshape)
    return np.ascontiguousarray(np.broadcast_to(g, shape))


@_diffop("sum")
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.data.shape
    return _record(out, (a,), lambda g: (_expand_reduced(g, shape, axis, keepdims),))


@_diffop("mean")
def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    shape = a.data.shape
    inv_n = _DEFAULT_DTYPE(1.0 / _reduced_count(shape, axis))
    return _record(out, (a,), lambda g: (_expand_reduced(g * inv_n, shape, axis, keepdims),))


# ---------------------------------------------------------------------------
# shape and layout ops (rank-4 image tensors)
# ---------------------------------------------------------------------------

def _check_rank4(x: Tensor, op: str) -> None:
    if x.data.ndim != 4:
        raise ValueError(f"{op} expects a rank-4 (B, C, H, W) tensor, got shape {x.data.shape}")


@_diffop("concat_channels")
def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ValueError("concat_channels needs at least one tensor")
    for p in parts:
        _check_rank4(p, "concat_channels")
    base = parts[0].data.shape
    for p in parts[1:]:
        s = p.data.shape
        if (s[0], s[2], s[3]) != (base[0], base[2], base[3]):
            raise ValueError(f"concat_channels: shapes {base} and {s} differ outside the channel axis")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    sizes = [p.data.shape[1] for p in parts]

    def bwd(g):
        grads = []
        off = 0
        for c in sizes:
            grads.append(np.ascontiguousarray(g[:, off:off + c]))
            off += c
        return tuple(grads)

    return _record(out, tuple(parts), bwd)


@_diffop("repeat_channels")
def repeat_channels(a: Tensor, n: int) -> Tensor:
    """Tile a single-channel map to n channels."""
    _check_rank4(a, "repeat_channels")
    if a.data.shape[1] != 1:
        raise ValueError(f"repeat_channels expects 1 channel, got {a.data.shape[1]}")
    out = Tensor(np.repeat(a.data, n, axis=1))
    return _record(out, (a,), lambda g: (g.sum(axis=1, keepdims=True),))


@_diffop("channel_slice")
def channel_slice(a: Tensor, c0: int, c1: int) -> Tensor:
    _check_rank4(a, "channel_slice")
    if not 0 <= c0 < c1 <= a.data.shape[1]:
        raise ValueError(f"channel_slice [{c0}, {c1}) out of range for {a.data.shape[1]} channels")
    out = Tensor(np.ascontiguousarray(a.data[:, c0:c1]))
    shape = a.data.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, c0:c1] = g
        return (full,)

    return _record(out, (a,), bwd)


@_diffop("spatial_slice")
def spatial_slice(a: Tensor, ys: slice, xs: slice) -> Tensor:
    _check_rank4(a, "spatial_slice")
    out = Tensor(np.ascontiguousarray(a.data[:, :, ys, xs]))
    shape = a.data.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, :, ys, xs] = g
        return (full,)

    return _record(out, (a,), bwd)


@_diffop("pad_zero")
def pad_zero(a: Tensor, pads) -> Tensor:
    """Zero padding; pads = ((top, bottom), (left, right))."""
    _check_rank4(a, "pad_zero")
    (pt, pb), (pl, pr) = pads
    out = Tensor(np.pad(a.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))))
    H, W = a.data.shape[2:]

    def bwd(g):
        return (np.ascontiguousarray(g[:, :, pt:pt + H, pl:pl + W]),)

    return _record(out, (a,), bwd)


@_diffop("pad_reflect")
def pad_reflect(a: Tensor, k: int) -> Tensor:
    """Reflect padding by k on both spatial axes (no edge repeat)."""
    _check_rank4(a, "pad_reflect")
    H, W = a.data.shape[2:]
    if k >= H or k >= W:
        raise ValueError(f"pad_reflect: pad {k} too large for spatial size {H}x{W}")
    out = Tensor(np.pad(a.data, ((0, 0), (0, 0), (k, k), (k, k)), mode="reflect"))
    iy = np.pad(np.arange(H), k, mode="reflect")
    ix = np.pad(np.arange(W), k, mode="reflect")

    def bwd(g):
        # fold x axis, then y axis
        gx = np.zeros(g.shape[:3] + (W,), dtype=g.dtype)
        np.add.at(gx.transpose(3, 0, 1, 2), ix, g.transpose(3, 0, 1, 2))
        gy = np.zeros(gx.shape[:2] + (H, W), dtype=g.dtype)
        np.add.at(gy.transpose(2, 0, 1, 3), iy, gx.transpose(2, 0, 1, 3))
        return (gy,)

    return _record(out, (a,), bwd)


@_diffop("dilate2d")
def dilate2d(a: Tensor, stride: int) -> Tensor:
    """Insert stride-1 zeros between spatial elements (transposed-conv helper)."""
    _check_rank4(a, "dilate2d")
    if stride == 1:
        return _record(Tensor(a.data.copy()), (a,), lambda g: (g,))
    B, C, H, W = a.data.shape
    data = np.zeros((B, C, (H - 1) * stride + 1, (W - 1) * stride + 1), dtype=a.data.dtype)
    data[:, :, ::stride, ::stride] = a.data
    out = Tensor(data)
    return _record(out, (a,), lambda g: (np.ascontiguousarray(g[:, :, ::stride, ::stride]),))


# ---------------------------------------------------------------------------
# pooling and resampling
# ---------------------------------------------------------------------------

@_diffop("avg_pool")
def avg_pool(a: Tensor, k: int, stride: int | None = None) -> Tensor:
    """k x k mean pooling; stride defaults to k (non-overlapping)."""
    _check_rank4(a, "avg_pool")
    s = k if stride is None else stride
    B, C, H, W = a.data.shape
    if H < k or W < k:
        raise ValueError(f"avg_pool: window {k} exceeds spatial size {H}x{W}")
    OH = (H - k) // s + 1
    OW = (W - k) // s + 1
    acc = np.zeros((B, C, OH, OW), dtype=a.data.dtype)
    for i in range(k):
        for j in range(k):
            acc += a.data[:, :, i:i + s * OH:s, j:j + s * OW:s]
    inv = _DEFAULT_DTYPE(1.0 / (k * k))
    out = Tensor(acc * inv)
    shape = a.data.shape

    def bwd(g):
        gi = g * inv
        dx = np.zeros(shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + s * OH:s, j:j + s * OW:s] += gi
        return (dx,)

    return _record(out, (a,), bwd)


def _bilinear_axis(in_size: int, out_size: int, dtype):
    # half-pixel-center mapping (align_corners false)
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i0 = np.minimum(i0, in_size - 1)
    frac = (src - i0).astype(dtype)
    i1 = np.minimum(i0 + 1, in_size - 1)
    return i0, i1, frac


@_diffop("upsample_bilinear")
def upsample_bilinear(a: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize with half-pixel centers; identity when sizes match."""
    _check_rank4(a, "upsample_bilinear")
    B, C, H, W = a.data.shape
    dt = a.data.dtype
    y0, y1, fy = _bilinear_axis(H, out_h, dt)
    x0, x1, fx = _bilinear_axis(W, out_w, dt)
    wy = fy[None, None, :, None]
    wx = fx[None, None, None, :]
    rows = a.data[:, :, y0, :] * (1.0 - wy) + a.data[:, :, y1, :] * wy
    data = rows[:, :, :, x0] * (1.0 - wx) + rows[:, :, :, x1] * wx
    out = Tensor(data)

    def bwd(g):
        drows = np.zeros((B, C, out_h, W), dtype=g.dtype)
        dt_x = drows.transpose(3, 0, 1, 2)
        np.add.at(dt_x, x0, (g * (1.0 - wx)).transpose(3, 0, 1, 2))
        np.add.at(dt_x, x1, (g * wx).transpose(3, 0, 1, 2))
        dx = np.zeros((B, C, H, W), dtype=g.dtype)
        dt_y = dx.transpose(2, 0, 1, 3)
        np.add.at(dt_y, y0, (drows * (1.0 - wy)).transpose(2, 0, 1, 3))
        np.add.at(dt_y, y1, (drows * wy).transpose(2, 0, 1, 3))
        return (dx,)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# convolution and normalization
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, stride: int):
    # xp is the padded input; returns (cols, OH, OW) with cols (B*OH*OW, C*k*k)
    B, C, Hp, Wp = xp.shape
    v = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    v = v[:, :, ::stride, ::stride]
    OH, OW = v.shape[2], v.shape[3]
    cols = v.transpose(0, 2, 3, 1, 4, 5).reshape(B * OH * OW, C * k * k)
    return np.ascontiguousarray(cols), OH, OW


@_diffop("conv2d")
def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation; out spatial size floor((H + 2p - k) / s) + 1."""
    _check_rank4(x, "conv2d")
    if w.data.ndim != 4 or w.data.shape[2] != w.data.shape[3]:
        raise ValueError(f"conv2d weight must be (out, in, k, k), got {w.data.shape}")
    if w.data.shape[1] != x.data.shape[1]:
        raise ValueError(f"conv2d: input has {x.data.shape[1]} channels, weight expects {w.data.shape[1]}")
    B, C, H, W = x.data.shape
    Cout, _, k, _ = w.data.shape
    if H + 2 * padding < k or W + 2 * padding < k:
        raise ValueError(f"conv2d: kernel {k} exceeds padded input {H + 2 * padding}x{W + 2 * padding}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols, OH, OW = _im2col(xp, k, stride)
    wmat = w.data.reshape(Cout, -1)
    om = cols @ wmat.T
    if b is not None:
        if b.data.shape != (Cout,):
            raise ValueError(f"conv2d bias must have shape ({Cout},), got {b.data.shape}")
        om += b.data
    out = Tensor(np.ascontiguousarray(om.reshape(B, OH, OW, Cout).transpose(0, 3, 1, 2)))

    x_needs = x.requires_grad
    w_needs = w.requires_grad

    def bwd(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(B * OH * OW, Cout)
        dw = (gmat.T @ cols).reshape(w.data.shape) if w_needs else None
        db = gmat.sum(axis=0) if b is not None else None
        dx = None
        if x_needs:
            dcols = (gmat @ wmat).reshape(B, OH, OW, C, k, k)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + stride * OH:stride, j:j + stride * OW:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            dx = dxp[:, :, padding:padding + H, padding:padding + W] if padding else dxp
            dx = np.ascontiguousarray(dx)
        return (dx, dw, db) if b is not None else (dx, dw)

    wrt = (x, w, b) if b is not None else (x, w)
    return _record(out, wrt, bwd)


@_diffop("conv_transpose2d")
def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2,
                     padding: int = 1, output_padding: int = 1) -> Tensor:
    """Fractionally-strided conv built from dilate + pad + unit-stride conv2d.

    Weight layout is (out, in, k, k), already in plain-conv orientation.
    Output size: (H - 1) * stride - 2 * padding + k + output_padding.
    """
    k = w.data.shape[2]
    edge = k - 1 - padding
    if edge < 0:
        raise ValueError(f"conv_transpose2d: padding {padding} exceeds kernel-1 ({k - 1})")
    xd = dilate2d(x, stride)
    xp = pad_zero(xd, ((edge, edge + output_padding), (edge, edge + output_padding)))
    return conv2d(xp, w, b, stride=1, padding=0)


@_diffop("instance_norm")
def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each (batch, channel) plane to zero mean, unit variance."""
    _check_rank4(x, "instance_norm")
    B, C, H, W = x.data.shape
    if H * W < 2:
        raise ValueError(f"instance_norm needs at least 2 pixels per plane, got {H}x{W}")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    var = x.data.var(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + _DEFAULT_DTYPE(eps))
    y = (x.data - mu) * inv
    out = Tensor(y)

    def bwd(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gym = (g * y).mean(axis=(2, 3), keepdims=True)
        return (inv * (g - gm - y * gym),)

    return _record(out, (x,), bwd)
