"""Differentiable layer primitives built on :mod:`genpretrain.tensor.engine`."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .engine import Tensor, as_tensor


def conv1d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlate ``x`` (batch, c_in, L) with ``weight`` (c_out, c_in, k).

    Output length is ``floor((L + 2*padding - k) / stride) + 1``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3:
        raise ValueError(f"conv1d expects 3-D input and weight, got {x.shape} and {weight.shape}")
    batch, c_in, length = x.shape
    c_out, w_in, k = weight.shape
    if w_in != c_in:
        raise ValueError(f"input has {c_in} channels but weight expects {w_in}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if k > length + 2 * padding:
        raise ValueError(f"kernel size {k} exceeds padded length {length + 2 * padding}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    windows = sliding_window_view(xp, k, axis=2)[:, :, ::stride]  # (B, C, L', k)
    out_len = windows.shape[2]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(batch * out_len, c_in * k)
    w2 = weight.data.reshape(c_out, c_in * k)
    out = cols @ w2.T
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    out = out.reshape(batch, out_len, c_out).transpose(0, 2, 1)

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(batch * out_len, c_out)
        gx = gw = gb = None
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(batch, out_len, c_in, k)
            gxp = np.zeros_like(xp)
            span = stride * (out_len - 1) + 1
            for j in range(k):
                gxp[:, :, j : j + span : stride] += gcols[:, :, :, j].transpose(0, 2, 1)
            gx = gxp[:, :, padding : padding + length] if padding else gxp
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._make(np.ascontiguousarray(out), parents, backward)


def linear(x, weight, bias=None):
    """Affine map over the last axis; ``weight`` is (out, in)."""
    out = as_tensor(x) @ as_tensor(weight).T
    return out + bias if bias is not None else out


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape[-1] != d or beta.shape[-1] != d:
        raise ValueError("gamma/beta width must match the normalised axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    var = (centred**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        reduce_axes = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=reduce_axes).reshape(gamma.shape) if gamma.requires_grad else None
        gbeta = g.sum(axis=reduce_axes).reshape(beta.shape) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return Tensor._make(out, (x, gamma, beta), backward)


def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), backward)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), backward)


def logsumexp(x, axis=-1, keepdims=False):
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    s = np.exp(x.data - m)
    total = s.sum(axis=axis, keepdims=True)
    out = np.log(total) + m
    probs = s / total

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * probs,)

    return Tensor._make(out if keepdims else np.squeeze(out, axis), (x,), backward)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under ``logits`` (N, K)."""
    labels = np.asarray(labels, dtype=np.int64)
    logp = log_softmax(logits, axis=-1)
    return -logp[np.arange(len(labels)), labels].mean()


def mse_loss(prediction, target):
    diff = as_tensor(prediction) - as_tensor(target)
    return (diff * diff).mean()


def l2_normalize(x, axis=-1, eps=1e-12):
    x = as_tensor(x)
    norm = ((x * x).sum(axis=axis, keepdims=True) + eps * eps).sqrt()
    return x / norm


def cosine_similarity(a, b):
    """``a.b / (|a| |b|)`` for two vectors; raises on a zero-norm input."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if not np.linalg.norm(a.data) > 0 or not np.linalg.norm(b.data) > 0:
        raise ValueError("cosine similarity is undefined for a zero-norm vector")
    return (a * b).sum() / ((a * a).sum().sqrt() * (b * b).sum().sqrt())


def cosine_similarity_matrix(a, b):
    """Pairwise cosine similarities between the rows of ``a`` and ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    if (np.linalg.norm(a.data, axis=-1) == 0).any() or (np.linalg.norm(b.data, axis=-1) == 0).any():
        raise ValueError("cosine similarity is undefined for a zero-norm row")
    return l2_normalize(a, eps=0.0) @ l2_normalize(b, eps=0.0).T


def max_pool1d(x, kernel_size=2, axis=-1):
    """Non-overlapping max pooling along ``axis``; a ragged tail is dropped."""
    x = as_tensor(x)
    axis = axis % x.ndim
    n = x.shape[axis] // kernel_size
    if n == 0:
        raise ValueError("sequence shorter than the pooling window")
    trimmed = x if x.shape[axis] == n * kernel_size else x[
        (slice(None),) * axis + (slice(0, n * kernel_size),)
    ]
    shape = x.shape[:axis] + (n, kernel_size) + x.shape[axis + 1 :]
    return trimmed.reshape(shape).max(axis=axis + 1)


def pad1d(x, left, right):
    """Zero-pad the last axis."""
    x = as_tensor(x)
    widths = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    length = x.shape[-1]
    return Tensor._make(
        np.pad(x.data, widths), (x,), lambda g: (g[..., left : left + length],)
    )


def upsample1d(x, factor=2):
    """Nearest-neighbour upsampling of the last axis."""
    x = as_tensor(x)

    def backward(g):
        return (g.reshape(g.shape[:-1] + (x.shape[-1], factor)).sum(axis=-1),)

    return Tensor._make(np.repeat(x.data, factor, axis=-1), (x,), backward)
