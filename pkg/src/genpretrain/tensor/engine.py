"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op that touches a tensor requiring gradients records its parents and a
backward closure on the output. Creation order doubles as the tape order, so
``backward`` replays the reachable nodes newest-first and then drops the
recorded closures, which frees the intermediate buffers of that step.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, evaluation)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled():
    return _grad_enabled


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


class Tensor:
    """A row-major float64 array that can take part in autodiff.

    ``grad`` is only populated on leaves (tensors not produced by an op) that
    have ``requires_grad=True``. Repeated ``backward`` calls accumulate into
    it; call ``zero_grad`` on the owning module or set ``grad = None``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64, copy=True) if not (
            isinstance(data, np.ndarray) and data.dtype == np.float64
        ) else data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._id = next(_ids)
        self.name = name

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    # -- introspection ----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- autodiff ---------------------------------------------------------------

    def backward(self, grad=None):
        """Back-propagate from this tensor into every reachable leaf.

        Without an explicit ``grad`` the tensor must hold a single value.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64).reshape(self.shape)
        if not self.requires_grad:
            raise ValueError("loss does not depend on any tensor requiring grad")

        nodes = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if node._id in nodes:
                continue
            nodes[node._id] = node
            stack.extend(node._parents)

        grads = {self._id: grad}
        for node_id in sorted(nodes, reverse=True):
            node = nodes[node_id]
            g = grads.pop(node_id, None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._id in grads:
                    grads[parent._id] = grads[parent._id] + pg
                else:
                    grads[parent._id] = pg
            # free this step's tape entry
            node._parents = ()
            node._backward = None

    # -- elementwise arithmetic -------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(
            a.data + b.data,
            (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(
            a.data - b.data,
            (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        )

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(
            a.data * b.data,
            (a, b),
            lambda g: (
                _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out = a.data / b.data
        return Tensor._make(
            out,
            (a, b),
            lambda g: (
                _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None,
            ),
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        a = self
        p = float(exponent)
        return Tensor._make(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),))

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul operands must be at least 2-D")

        def backward(g):
            ga = gb = None
            if a.requires_grad:
                ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
            if b.requires_grad:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            return ga, gb

        return Tensor._make(a.data @ b.data, (a, b), backward)

    # -- unary functions --------------------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self):
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor._make(out, (self,), lambda g: (g * 0.5 / out,))

    def relu(self):
        mask = self.data > 0
        return Tensor._make(self.data * mask, (self,), lambda g: (g * mask,))

    def leaky_relu(self, slope=0.2):
        scale = np.where(self.data > 0, 1.0, slope)
        return Tensor._make(self.data * scale, (self,), lambda g: (g * scale,))

    def tanh(self):
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), lambda g: (g * (1.0 - out * out),))

    def sigmoid(self):
        out = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        return Tensor._make(out, (self,), lambda g: (g * out * (1.0 - out),))

    # -- reductions -------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor._make(out, (a,), backward)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else np.prod(
            [self.shape[i] for i in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis=None, keepdims=False):
        """Maximum along ``axis``; the gradient goes to the first maximiser."""
        a = self
        if axis is None:
            flat = a.data.reshape(-1)
            idx = int(np.argmax(flat))

            def backward_all(g):
                grad = np.zeros(flat.size)
                grad[idx] = float(np.asarray(g).reshape(-1)[0])
                return (grad.reshape(a.shape),)

            out = flat[idx]
            return Tensor._make(np.array(out).reshape((1,) * a.ndim if keepdims else ()), (a,), backward_all)
        idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
        out = np.take_along_axis(a.data, idx, axis=axis)

        def backward(g):
            grad = np.zeros_like(a.data)
            if not keepdims:
                g = np.expand_dims(g, axis)
            np.put_along_axis(grad, idx, g, axis=axis)
            return (grad,)

        return Tensor._make(out if keepdims else np.squeeze(out, axis), (a,), backward)

    # -- shape manipulation -----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._make(
            np.transpose(self.data, axes), (self,), lambda g: (np.transpose(g, inverse),)
        )

    def swapaxes(self, a1, a2):
        axes = list(range(self.ndim))
        axes[a1], axes[a2] = axes[a2], axes[a1]
        return self.transpose(tuple(axes))

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, index):
        a = self
        if isinstance(index, Tensor):
            index = index.data.astype(np.int64)
        fancy = _is_fancy(index)

        def backward(g):
            grad = np.zeros_like(a.data)
            if fancy:
                np.add.at(grad, index, g)
            else:
                grad[index] += g
            return (grad,)

        return Tensor._make(a.data[index], (a,), backward)


def _is_fancy(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def where(condition, a, b):
    """Select ``a`` where ``condition`` holds, else ``b`` (condition is constant)."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(condition, dtype=bool)
    return Tensor._make(
        np.where(cond, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * cond, a.shape), _unbroadcast(g * ~cond, b.shape)),
    )
