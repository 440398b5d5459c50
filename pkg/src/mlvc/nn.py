"""Module system and transformer building blocks on top of :mod:`mlvc.tensor`."""
from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from mlvc import tensor as T
from mlvc.tensor import Tensor

INIT_STD = 0.02


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, requires_grad: bool = True):
        super().__init__(np.asarray(data, dtype=np.float32), requires_grad=requires_grad)


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) samples truncated to +-2 std by resampling."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(np.float32)


class Module:
    """Minimal container: parameters and child modules are discovered from attributes."""

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state) -> None:
        params = dict(self.named_parameters())
        missing = [k for k in params if k not in state]
        if missing:
            raise KeyError(f"state is missing tensor {missing[0]!r}")
        unexpected = [k for k in state if k not in params]
        if unexpected:
            raise KeyError(f"state has unexpected tensor {unexpected[0]!r}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"tensor {name!r}: expected shape {p.shape}, got {value.shape}")
            p.data = value.astype(np.float32, copy=True)


def count_parameters(model: Module, trainable_only: bool = True) -> int:
    return sum(p.size for p in model.parameters() if p.requires_grad or not trainable_only)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(trunc_normal(rng, (in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.weight, self.bias, self.eps)


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        super().__init__()
        self.p = p
        self._rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.p, self._rng, self.training)


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dropout_p: float = 0.0):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} is not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.drop = Dropout(dropout_p, rng)
        self.last_attention: np.ndarray | None = None

    def forward(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, self.head_dim).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(self.head_dim))
        attn = T.softmax(scores, axis=-1)
        self.last_attention = attn.data
        out = self.drop(attn) @ v
        out = out.transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.proj(out)


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, dropout_p: float = 0.0):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)
        self.drop = Dropout(dropout_p, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.drop(self.fc2(self.drop(T.gelu(self.fc1(x)))))


class EncoderBlock(Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float, rng: np.random.Generator, dropout_p: float = 0.0):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng, dropout_p)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, int(dim * mlp_ratio), rng, dropout_p)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class Encoder(Module):
    """Stack of pre-norm blocks followed by a final layer norm."""

    def __init__(self, dim: int, depth: int, heads: int, mlp_ratio: float, rng: np.random.Generator,
                 dropout_p: float = 0.0):
        super().__init__()
        self.dim = dim
        self.blocks = [EncoderBlock(dim, heads, mlp_ratio, rng, dropout_p) for _ in range(depth)]
        self.norm = LayerNorm(dim)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise T.ShapeError(f"encoder expects token width {self.dim}, got {x.shape[-1]}")
        for block in self.blocks:
            x = block(x)
        return self.norm(x)

    def attention_maps(self) -> list[np.ndarray]:
        return [b.attn.last_attention for b in self.blocks]
