"""Reverse-mode differentiation over numpy arrays.

``Var`` wraps a float64 array and remembers the op that produced it.  Every
vector-Jacobian product is itself written with ``Var`` ops, so running
``backward(..., create_graph=True)`` records the adjoint computation and it can
be differentiated again (this is how Hessian-vector products are obtained).

Two context flags steer recording:

* recording on/off: with recording off, ops return constants (cheap forward
  passes, first-order backward passes);
* an optional active trace, used by :mod:`tdlab.autodiff.graph` to capture a
  static :class:`CompGraph`.
"""

from __future__ import annotations

import contextlib
import contextvars
import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_RECORDING = contextvars.ContextVar("tdlab_recording", default=True)
_TRACE = contextvars.ContextVar("tdlab_trace", default=None)
_ids = itertools.count()


@contextlib.contextmanager
def recording(enabled: bool):
    token = _RECORDING.set(enabled)
    try:
        yield
    finally:
        _RECORDING.reset(token)


def no_grad():
    return recording(False)


class Var:
    """A node in the dynamic computation graph."""

    __slots__ = ("value", "op", "parents", "attrs", "requires_grad", "uid", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, value, requires_grad: bool = False, op: str | None = None,
                 parents: tuple = (), attrs: dict | None = None):
        arr = np.asarray(value)
        if arr.dtype.kind in "fb" or requires_grad:
            arr = arr.astype(np.float64, copy=False)
        self.value = arr
        self.op = op
        self.parents = parents
        self.attrs = attrs or {}
        self.requires_grad = requires_grad
        self.uid = next(_ids)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.value)

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __neg__(self): return neg(self)

    @property
    def T(self):
        return transpose(self)


def const(x) -> Var:
    if isinstance(x, Var):
        return x
    arr = np.asarray(x)
    if arr.dtype.kind not in "iub":
        arr = arr.astype(np.float64, copy=False)
    v = Var(arr)
    tr = _TRACE.get()
    if tr is not None:
        tr.add_const(v)
    return v


def leaf(value) -> Var:
    """A differentiable input (a parameter block)."""
    return Var(np.array(value, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------------------
# op registry


@dataclass(frozen=True)
class Op:
    name: str
    forward: Callable
    vjp: Callable | None  # (out: Var, g: Var) -> tuple[Var | None, ...]


OPS: dict[str, Op] = {}


def _register(name, forward, vjp=None):
    OPS[name] = Op(name, forward, vjp)


def apply(name: str, *parents, **attrs) -> Var:
    op = OPS[name]
    parents = tuple(const(p) for p in parents)
    value = op.forward(*[p.value for p in parents], **attrs)
    track = (op.vjp is not None and _RECORDING.get()
             and any(p.requires_grad for p in parents))
    if track:
        out = Var(value, True, name, parents, attrs)
    else:
        out = Var(value, False, name, (), attrs)
    tr = _TRACE.get()
    if tr is not None:
        tr.add_op(out, name, parents, attrs)
    return out


# ---------------------------------------------------------------------------
# broadcasting helpers


def _sum_to(x: np.ndarray, shape) -> np.ndarray:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1)
    y = x.sum(axis=axes, keepdims=True) if axes else x
    if lead:
        y = y.reshape(y.shape[lead:])
    return y.reshape(shape)


def sum_to(x, shape) -> Var:
    return apply("sum_to", x, shape=tuple(shape))


def broadcast_to(x, shape) -> Var:
    return apply("broadcast_to", x, shape=tuple(shape))


def _unbroadcast(g: Var, shape) -> Var:
    return g if g.shape == tuple(shape) else sum_to(g, shape)


_register("sum_to", lambda x, shape: _sum_to(x, shape),
          lambda out, g: (broadcast_to(g, out.parents[0].shape),))
_register("broadcast_to", lambda x, shape: np.broadcast_to(x, shape).copy(),
          lambda out, g: (sum_to(g, out.parents[0].shape),))

# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b): return apply("add", a, b)
def sub(a, b): return apply("sub", a, b)
def mul(a, b): return apply("mul", a, b)
def div(a, b): return apply("div", a, b)
def neg(a): return apply("neg", a)


def _vjp_add(out, g):
    a, b = out.parents
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _vjp_sub(out, g):
    a, b = out.parents
    return _unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)


def _vjp_mul(out, g):
    a, b = out.parents
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _vjp_div(out, g):
    a, b = out.parents
    ga = _unbroadcast(g / b, a.shape)
    gb = _unbroadcast(neg(g * a / (b * b)), b.shape)
    return ga, gb


_register("add", np.add, _vjp_add)
_register("sub", np.subtract, _vjp_sub)
_register("mul", np.multiply, _vjp_mul)
_register("div", np.divide, _vjp_div)
_register("neg", np.negative, lambda out, g: (neg(g),))

# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a, b): return apply("matmul", a, b)
def transpose(a): return apply("transpose", a)
def reshape(a, shape): return apply("reshape", a, shape=tuple(shape))


def _matmul_fwd(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    return a @ b


_register("matmul", _matmul_fwd,
          lambda out, g: (matmul(g, transpose(out.parents[1])),
                          matmul(transpose(out.parents[0]), g)))
_register("transpose", lambda a: np.ascontiguousarray(a.T), lambda out, g: (transpose(g),))
_register("reshape", lambda a, shape: a.reshape(shape),
          lambda out, g: (reshape(g, out.parents[0].shape),))


def _slice_fwd(a, start, stop):
    return a[start:stop].copy()


def _pad1d_fwd(a, start, total):
    out = np.zeros(total)
    out[start:start + a.shape[0]] = a
    return out


def flat_slice(a, start: int, stop: int): return apply("slice1d", a, start=start, stop=stop)
def pad1d(a, start: int, total: int): return apply("pad1d", a, start=start, total=total)


_register("slice1d", _slice_fwd,
          lambda out, g: (pad1d(g, out.attrs["start"], out.parents[0].shape[0]),))
_register("pad1d", _pad1d_fwd,
          lambda out, g: (flat_slice(g, out.attrs["start"],
                                     out.attrs["start"] + out.parents[0].shape[0]),))


def _concat_fwd(*xs):
    return np.concatenate([x.reshape(-1) for x in xs])


def _vjp_concat(out, g):
    res, off = [], 0
    for p in out.parents:
        n = p.value.size
        res.append(reshape(flat_slice(g, off, off + n), p.shape))
        off += n
    return tuple(res)


def flat_concat(*xs) -> Var:
    """Flatten and concatenate."""
    return apply("concat", *xs)


_register("concat", _concat_fwd, _vjp_concat)

# ---------------------------------------------------------------------------
# reductions


def sum(a, axis=None, keepdims: bool = False):  # noqa: A001 - mirrors numpy
    if isinstance(axis, list):
        axis = tuple(axis)
    return apply("sum", a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims: bool = False):
    a = const(a)
    n = a.value.size if axis is None else int(np.prod(
        [a.shape[i] for i in (axis if isinstance(axis, tuple) else (axis,))]))
    return sum(a, axis, keepdims) * (1.0 / n)


def _keepdims_shape(shape, axis):
    if axis is None:
        return (1,) * len(shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = {a % len(shape) for a in axes}
    return tuple(1 if i in axes else s for i, s in enumerate(shape))


def _vjp_sum(out, g):
    x = out.parents[0]
    if not out.attrs["keepdims"]:
        g = reshape(g, _keepdims_shape(x.shape, out.attrs["axis"]))
    return (broadcast_to(g, x.shape),)


_register("sum", lambda a, axis, keepdims: np.sum(a, axis=axis, keepdims=keepdims), _vjp_sum)


def _argmax_mask_fwd(a, axis):
    # one-hot at the first maximal index (ties -> lowest index)
    idx = np.argmax(a, axis=axis)
    mask = np.zeros_like(a, dtype=np.float64)
    np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis=axis)
    return mask


_register("argmax_mask", _argmax_mask_fwd)


def argmax_mask(a, axis: int = -1): return apply("argmax_mask", a, axis=axis)


def max(a, axis: int = -1, keepdims: bool = False):  # noqa: A001
    """Max-reduction; the adjoint routes to the first maximal index."""
    return apply("max", a, axis=axis, keepdims=keepdims)


def _vjp_max(out, g):
    x = out.parents[0]
    axis = out.attrs["axis"]
    if not out.attrs["keepdims"]:
        g = reshape(g, _keepdims_shape(x.shape, axis))
    return (broadcast_to(g, x.shape) * argmax_mask(x, axis),)


_register("max", lambda a, axis, keepdims: np.max(a, axis=axis, keepdims=keepdims), _vjp_max)

# ---------------------------------------------------------------------------
# nonlinearities


def exp(a): return apply("exp", a)
def log(a): return apply("log", a)
def tanh(a): return apply("tanh", a)


def leaky_relu(a, slope: float = 0.01):
    return apply("leaky_relu", a, slope=float(slope))


def _log_fwd(a):
    if np.any(a <= 0):
        raise FloatingPointError("log of a nonpositive value")
    return np.log(a)


_register("exp", np.exp, lambda out, g: (g * out,))
_register("log", _log_fwd, lambda out, g: (g / out.parents[0],))
_register("tanh", np.tanh, lambda out, g: (g * (1.0 - out * out),))
_register("leaky_mask", lambda a, slope: np.where(a > 0, 1.0, slope))
_register("leaky_relu", lambda a, slope: np.where(a > 0, a, slope * a),
          lambda out, g: (g * apply("leaky_mask", out.parents[0], slope=out.attrs["slope"]),))


def _softmax_fwd(a, axis):
    z = a - np.max(a, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax_fwd(a, axis):
    z = a - np.max(a, axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(a, axis: int = -1): return apply("softmax", a, axis=axis)
def log_softmax(a, axis: int = -1): return apply("log_softmax", a, axis=axis)


def _vjp_softmax(out, g):
    axis = out.attrs["axis"]
    return (out * (g - sum(g * out, axis=axis, keepdims=True)),)


def _vjp_log_softmax(out, g):
    axis = out.attrs["axis"]
    s = softmax(out.parents[0], axis)
    return (g - s * sum(g, axis=axis, keepdims=True),)


_register("softmax", _softmax_fwd, _vjp_softmax)
_register("log_softmax", _log_softmax_fwd, _vjp_log_softmax)


def stop_gradient(a):
    return apply("stop_gradient", a)


_register("stop_gradient", lambda a: a.copy())

# ---------------------------------------------------------------------------
# gather / scatter along the last axis


def _take_fwd(a, idx):
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != a.shape[:-1]:
        raise ValueError(f"gather index shape {idx.shape} does not match {a.shape[:-1]}")
    return np.take_along_axis(a, idx[..., None], axis=-1)[..., 0]


def _scatter_fwd(g, idx, k):
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros(g.shape + (k,))
    np.put_along_axis(out, idx[..., None], g[..., None], axis=-1)
    return out


def take(a, idx):
    """Select ``a[..., idx]`` per leading position (e.g. Q(s, a) from Q(s, .))."""
    return apply("take", a, idx)


def scatter(g, idx, k: int):
    return apply("scatter", g, idx, k=k)


_register("take", _take_fwd,
          lambda out, g: (scatter(g, out.parents[1], out.parents[0].shape[-1]), None))
_register("scatter", _scatter_fwd, lambda out, g: (take(g, out.parents[1]), None))

# ---------------------------------------------------------------------------
# 2-D convolution (cross-correlation), NCHW layout, OIHW weights.
# conv, input-grad and weight-grad are the three partial maps of one trilinear
# form, so their adjoints close over the same three ops.


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _out_hw(h, w, kh, kw, stride, pad):
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


def _conv_fwd(x, w, stride, pad):
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, kernel {w.shape}")
    kh, kw = w.shape[2:]
    win = sliding_window_view(_pad(x, pad), (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("nchwij,ocij->nohw", win, w, optimize=True)


def _conv_input_grad_fwd(g, w, x_shape, stride, pad):
    n, c, h, wd = x_shape
    kh, kw = w.shape[2:]
    ho, wo = g.shape[2:]
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.einsum(
                "nohw,oc->nchw", g, w[:, :, i, j], optimize=True)
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dxp)


def _conv_weight_grad_fwd(x, g, w_shape, stride, pad):
    kh, kw = w_shape[2:]
    win = sliding_window_view(_pad(x, pad), (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = g.shape[2:]
    win = win[:, :, :ho, :wo]
    return np.einsum("nchwij,nohw->ocij", win, g, optimize=True)


def conv2d(x, w, stride: int = 1, pad: int = 0):
    return apply("conv2d", x, w, stride=int(stride), pad=int(pad))


def _conv_input_grad(g, w, x_shape, stride, pad):
    return apply("conv2d_input_grad", g, w, x_shape=tuple(x_shape), stride=stride, pad=pad)


def _conv_weight_grad(x, g, w_shape, stride, pad):
    return apply("conv2d_weight_grad", x, g, w_shape=tuple(w_shape), stride=stride, pad=pad)


def _vjp_conv(out, g):
    x, w = out.parents
    s, p = out.attrs["stride"], out.attrs["pad"]
    return _conv_input_grad(g, w, x.shape, s, p), _conv_weight_grad(x, g, w.shape, s, p)


def _vjp_conv_input_grad(out, u):
    g, w = out.parents
    s, p = out.attrs["stride"], out.attrs["pad"]
    return conv2d(u, w, s, p), _conv_weight_grad(u, g, w.shape, s, p)


def _vjp_conv_weight_grad(out, u):
    x, g = out.parents
    s, p = out.attrs["stride"], out.attrs["pad"]
    return _conv_input_grad(g, u, x.shape, s, p), conv2d(x, u, s, p)


_register("conv2d", _conv_fwd, _vjp_conv)
_register("conv2d_input_grad", _conv_input_grad_fwd, _vjp_conv_input_grad)
_register("conv2d_weight_grad", _conv_weight_grad_fwd, _vjp_conv_weight_grad)

# ---------------------------------------------------------------------------
# composite losses


def squared_error(pred, target):
    """Elementwise (pred - target)**2, no 1/2 factor."""
    d = sub(pred, target)
    return d * d


def cross_entropy(logits, labels):
    """Per-example -log softmax(logits)[label]."""
    return neg(take(log_softmax(logits, -1), labels))


# ---------------------------------------------------------------------------
# backward pass


def _toposort(out: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.uid in seen:
            continue
        seen.add(node.uid)
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and p.uid not in seen:
                stack.append((p, False))
    return order


def backward(out: Var, wrt, grad_out=None, create_graph: bool = False) -> list:
    """Gradients of ``out`` w.r.t. each Var in ``wrt`` (``None`` where unreachable).

    With ``create_graph`` the adjoint ops are recorded and the returned
    gradients are differentiable.
    """
    wrt = list(wrt)
    if grad_out is None:
        if out.value.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {out.shape}")
        grad_out = np.ones_like(out.value)
    with recording(create_graph):
        grads: dict[int, Var] = {out.uid: const(grad_out)}
        if out.requires_grad:
            for node in reversed(_toposort(out)):
                g = grads.get(node.uid)
                if g is None or not node.parents:
                    continue
                parts = OPS[node.op].vjp(node, g)
                for p, gp in zip(node.parents, parts):
                    if gp is None or not p.requires_grad:
                        continue
                    prev = grads.get(p.uid)
                    grads[p.uid] = gp if prev is None else add(prev, gp)
        return [grads.get(v.uid) for v in wrt]
