import numpy as np
import pytest
from hypothesis import settings

from genpretrain.tensor import Tensor

settings.register_profile("repo", max_examples=40, deadline=None, derandomize=True)
settings.load_profile("repo")


def numeric_grad(f, arrays, h=1e-5):
    """Central finite differences of scalar ``f(*arrays)`` w.r.t. every array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + h
            up = f(*arrays)
            a[idx] = orig - h
            down = f(*arrays)
            a[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_error(a, b):
    # the floor keeps exactly-zero gradients (e.g. a key bias under softmax)
    # from comparing finite-difference noise against itself
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-3)
    return float(np.linalg.norm(a - b) / scale)


def gradcheck(fn, *arrays, h=1e-5):
    """Largest relative error between autodiff and finite-difference grads.

    ``fn`` maps Tensors to a scalar Tensor.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    fn(*tensors).backward()

    def value(*arrs):
        return fn(*[Tensor(a) for a in arrs]).item()

    numeric = numeric_grad(value, arrays, h)
    return max(rel_error(t.grad, n) for t, n in zip(tensors, numeric))


def conv1d_loop(x, w, b=None, stride=1, padding=0):
    """Direct nested-loop cross-correlation, the reference for conv1d."""
    n, c_in, length = x.shape
    c_out, _, k = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    out_len = (length + 2 * padding - k) // stride + 1
    out = np.zeros((n, c_out, out_len))
    for i in range(n):
        for o in range(c_out):
            for t in range(out_len):
                s = 0.0
                for c in range(c_in):
                    for j in range(k):
                        s += xp[i, c, t * stride + j] * w[o, c, j]
                out[i, o, t] = s + (0.0 if b is None else b[o])
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def param_gradcheck(module, loss_fn, h=1e-5, max_entries=40, seed=0):
    """Relative error of ``module``'s parameter gradients under ``loss_fn()``.

    ``loss_fn`` must be deterministic. Each parameter is probed on up to
    ``max_entries`` randomly chosen entries to keep large layers cheap.
    """
    params = module.parameters()
    module.zero_grad()
    loss_fn().backward()
    pick = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = np.zeros(p.shape) if p.grad is None else p.grad
        flat = np.arange(p.size)
        chosen = flat if p.size <= max_entries else pick.choice(flat, max_entries, replace=False)
        a, n = [], []
        for i in chosen:
            idx = np.unravel_index(i, p.shape)
            orig = p.data[idx]
            p.data[idx] = orig + h
            up = loss_fn().item()
            p.data[idx] = orig - h
            down = loss_fn().item()
            p.data[idx] = orig
            a.append(analytic[idx])
            n.append((up - down) / (2 * h))
        worst = max(worst, rel_error(np.array(a), np.array(n)))
    return worst
