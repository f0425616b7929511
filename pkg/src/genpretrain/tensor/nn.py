"""Parameter containers and the layers the backbones and generators use."""

import math

import numpy as np

from . import functional as F
from .engine import Tensor


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Module:
    """Base class; tensors with ``requires_grad`` and sub-modules are discovered
    from instance attributes in assignment order."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()


class Linear(Module):
    def __init__(self, in_features, out_features, bias=True, rng=None):
        rng = _rng(rng)
        bound = 1.0 / math.sqrt(in_features)
        self.weight = parameter(rng.uniform(-bound, bound, (out_features, in_features)))
        self.bias = parameter(rng.uniform(-bound, bound, out_features)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=None, bias=True, rng=None):
        rng = _rng(rng)
        bound = 1.0 / math.sqrt(in_channels * kernel_size)
        self.weight = parameter(rng.uniform(-bound, bound, (out_channels, in_channels, kernel_size)))
        self.bias = parameter(rng.uniform(-bound, bound, out_channels)) if bias else None
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[0]

    def forward(self, x):
        return F.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention over (batch, seq, dim) input."""

    def __init__(self, dim, n_heads, rng=None):
        if dim % n_heads:
            raise ValueError(f"width {dim} is not divisible by {n_heads} heads")
        rng = _rng(rng)
        self.n_heads = n_heads
        self.q = Linear(dim, dim, rng=rng)
        self.k = Linear(dim, dim, rng=rng)
        self.v = Linear(dim, dim, rng=rng)
        self.out = Linear(dim, dim, rng=rng)

    def _split(self, x):
        b, s, d = x.shape
        return x.reshape(b, s, self.n_heads, d // self.n_heads).transpose(0, 2, 1, 3)

    def forward(self, x):
        b, s, d = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d // self.n_heads))
        attn = F.softmax(scores, axis=-1)
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(b, s, d)
        return self.out(ctx)


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class ReLU(Module):
    def forward(self, x):
        return x.relu()
