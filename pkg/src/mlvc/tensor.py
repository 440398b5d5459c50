"""Dense tensors with a reverse-mode gradient tape.

Every differentiable operation records a node holding its inputs and a
backward rule. ``backward`` walks the recorded nodes reachable from a scalar
loss exactly once, in reverse recording order, and accumulates gradients into
leaf tensors that have ``requires_grad`` set. Gradients accumulate across
calls until ``zero_grad`` is called.

Arrays are numpy buffers. Training runs in float32; pass ``dtype=np.float64``
when building tensors for finite-difference checks.
"""
from __future__ import annotations

import contextlib
import itertools
import math
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_sequence = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Node:
    """One recorded operation on the tape."""

    __slots__ = ("inputs", "backward_fn", "seq", "name")

    def __init__(self, inputs, backward_fn, name):
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.seq = next(_sequence)
        self.name = name


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def backward(self):
        backward(self)


def _raise_not_scalar(t: Tensor):
    raise ShapeError(f"expected a single-element tensor, got shape {t.shape}")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable, name: str) -> Tensor:
    out = Tensor(out_data, dtype=out_data.dtype)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(tuple(inputs), backward_fn, name)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise arithmetic -------------------------------------------------
def add(a, b) -> Tensor:
    a = as_tensor(a) if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    return _record(a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a) if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    return _record(a.data - b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a) if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    return _record(a.data * b.data, (a, b),
                   lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a = as_tensor(a) if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)

    def _backward(g):
        ga = unbroadcast(g / b.data, a.shape)
        gb = unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _record(a.data / b.data, (a, b), _backward, "div")


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    if isinstance(exponent, Tensor):
        raise TypeError("only scalar exponents are supported")
    out = a.data ** exponent
    return _record(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),), "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


# -- reductions and shape ----------------------------------------------------
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(np.asarray(out), (a,), _backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return tsum(a, axes, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return _record(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def swapaxes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[axis1], axes[axis2] = axes[axis2], axes[axis1]
    return transpose(a, tuple(axes))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def _backward(g):
        full = np.zeros_like(a.data)
        if _is_basic_index(index):
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _record(np.array(out), (a,), _backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, tensors, _backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def _backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _record(out, tensors, _backward, "stack")


# -- linear algebra ------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch semantics over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def _backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _record(out, (a, b), _backward, "matmul")


# -- neural-network primitives -----------------------------------------------------
def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.ndim == 0 or x.shape[axis] == 0:
        raise ShapeError(f"softmax over an empty axis (shape {x.shape}, axis {axis})")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (x,), _backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with population variance, then scale and shift."""
    if not eps > 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match width {width}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def _backward(g):
        lead = tuple(range(g.ndim - 1))
        g_gamma = (g * xhat).sum(axis=lead)
        g_beta = g.sum(axis=lead)
        gx = g * gamma.data
        gx = inv_std * (gx - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return gx, g_gamma, g_beta

    return _record(out.astype(x.dtype, copy=False), (x, gamma, beta), _backward, "layer_norm")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v ** 3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def _backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner),)

    return _record(out, (x,), _backward, "gelu")


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(v.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    out = _stable_sigmoid(x.data)
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _record(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy on raw logits.

    Uses max(z, 0) - z*y + log(1 + exp(-|z|)) so large |z| never overflows.
    """
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets)
    if y.shape != logits.shape:
        raise ShapeError(f"bce_with_logits shapes differ: logits {logits.shape}, targets {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("bce_with_logits targets must be 0 or 1")
    z = logits.data
    y = y.astype(z.dtype)
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = max(z.size, 1)
    out = np.asarray(per.mean(), dtype=z.dtype)

    def _backward(g):
        return (g * (_stable_sigmoid(z) - y) / n,)

    return _record(out, (logits,), _backward, "bce_with_logits")


def conv3d(x: Tensor, kernels: Tensor, stride=(1, 1, 1), bias: Optional[Tensor] = None) -> Tensor:
    """Valid (unpadded) 3-D convolution.

    ``x`` is ``C x T x H x W`` or batched ``N x C x T x H x W``; ``kernels`` is
    ``K x C x t x h x w``. Output extents are ``floor((in - k) / stride) + 1``.
    """
    batched = x.ndim == 5
    if x.ndim not in (4, 5) or kernels.ndim != 5:
        raise ShapeError(f"conv3d expects CxTxHxW input and KxCxtxhxw kernels, got {x.shape}, {kernels.shape}")
    xd = x.data if batched else x.data[None]
    n, c, t_in, h_in, w_in = xd.shape
    k, kc, kt, kh, kw = kernels.shape
    st, sh, sw = stride
    if kc != c:
        raise ShapeError(f"conv3d channel mismatch: input {x.shape}, kernels {kernels.shape}")
    if kt > t_in or kh > h_in or kw > w_in:
        raise ShapeError(f"conv3d kernel {kernels.shape[2:]} larger than input {xd.shape[2:]}")
    if min(st, sh, sw) < 1:
        raise ValueError(f"conv3d strides must be >= 1, got {stride}")
    to = (t_in - kt) // st + 1
    ho = (h_in - kh) // sh + 1
    wo = (w_in - kw) // sw + 1

    windows = np.lib.stride_tricks.sliding_window_view(xd, (kt, kh, kw), axis=(2, 3, 4))
    windows = windows[:, :, ::st, ::sh, ::sw][:, :, :to, :ho, :wo]
    # windows: N, C, To, Ho, Wo, kt, kh, kw
    out = np.tensordot(windows, kernels.data, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    out = np.ascontiguousarray(np.moveaxis(out, 4, 1))
    if bias is not None:
        out = out + bias.data.reshape(1, k, 1, 1, 1)
    if not batched:
        out = out[0]

    def _backward(g):
        gb = g if batched else g[None]
        g_kernels = np.tensordot(gb, windows, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
        # contribution of every output position to its receptive field
        g_win = np.tensordot(gb, kernels.data, axes=([1], [0]))  # N,To,Ho,Wo,C,kt,kh,kw
        gx = np.zeros_like(xd)
        if kt * kh * kw <= to * ho * wo:
            for a in range(kt):
                for b in range(kh):
                    for d in range(kw):
                        gx[:, :, a:a + st * to:st, b:b + sh * ho:sh, d:d + sw * wo:sw] += \
                            np.moveaxis(g_win[..., a, b, d], 4, 1)
        else:
            for i in range(to):
                for j in range(ho):
                    for m in range(wo):
                        gx[:, :, i * st:i * st + kt, j * sh:j * sh + kh, m * sw:m * sw + kw] += g_win[:, i, j, m]
        grads = [gx if batched else gx[0], g_kernels]
        if bias is not None:
            grads.append(gb.sum(axis=(0, 2, 3, 4)))
        return tuple(grads)

    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    return _record(out.astype(xd.dtype, copy=False), inputs, _backward, "conv3d")


# -- reverse pass ---------------------------------------------------------------
def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires-grad leaf reachable from ``loss``.

    Gradients add onto whatever a previous call left in ``.grad``.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any tensor that requires grad")

    nodes = {}
    stack_ = [loss]
    seen = set()
    while stack_:
        t = stack_.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t.node is not None:
            nodes[t.node.seq] = t
            stack_.extend(i for i in t.node.inputs if i.requires_grad)

    grads = {id(loss): np.ones_like(loss.data)}
    for seq in sorted(nodes, reverse=True):
        t = nodes[seq]
        g = grads.pop(id(t), None)
        if g is None:
            continue
        input_grads = t.node.backward_fn(g)
        for inp, ig in zip(t.node.inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            ig = np.asarray(ig, dtype=inp.dtype)
            if inp.node is None:
                inp.grad = ig.copy() if inp.grad is None else inp.grad + ig
            elif id(inp) in grads:
                grads[id(inp)] = grads[id(inp)] + ig
            else:
                grads[id(inp)] = ig
