"""AdamW with decoupled weight decay and the 1cycle learning-rate schedule."""

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adamw_step(params, grads, state):
    """Apply one AdamW update in place to the arrays in ``params``.

    ``grads`` entries may be ``None`` (parameter untouched by the loss); such
    parameters still receive weight decay, matching the usual decoupled form.
    Raises ``FloatingPointError`` before touching anything if a gradient is
    not finite.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for i, g in enumerate(grads):
        if g is not None:
            if g.shape != params[i].shape:
                raise ValueError(f"gradient {i} has shape {g.shape}, parameter {params[i].shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {i}; step rejected")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        if g is None:
            continue
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class AdamW:
    """Stateful wrapper binding :func:`adamw_step` to a list of parameter tensors."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        self.params = list(params)
        self.state = OptimState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = float(value)

    def step(self):
        adamw_step([p.data for p in self.params], [p.grad for p in self.params], self.state)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


@dataclass(frozen=True)
class LrSchedule:
    max_lr: float
    total_steps: int
    warmup: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4

    @property
    def peak_step(self):
        return int(round(self.warmup * (self.total_steps - 1)))

    def __call__(self, step):
        return onecycle_lr(step, self)


def _cos_anneal(start, end, frac):
    return end + (start - end) / 2.0 * (1.0 + math.cos(math.pi * frac))


def onecycle_lr(step, schedule):
    """Learning rate at ``step``: cosine rise from ``max_lr/div_factor`` to
    ``max_lr`` at the warmup end, then cosine decay to ``max_lr/final_div_factor``
    at the last step."""
    if not 0 <= step < schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps})")
    peak = schedule.peak_step
    top = schedule.max_lr
    if step <= peak:
        if peak == 0:
            return top
        return _cos_anneal(top / schedule.div_factor, top, step / peak)
    last = schedule.total_steps - 1
    return _cos_anneal(top, top / schedule.final_div_factor, (step - peak) / (last - peak))
