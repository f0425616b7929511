"""Minibatch loop shared by pretraining, fine-tuning and generator fitting."""

import math
from dataclasses import dataclass

import numpy as np

from .tensor import AdamW, LrSchedule


class TrainingDivergedError(FloatingPointError):
    """A loss or gradient went non-finite; carries where it happened."""


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    warmup: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4

    def optimizer(self, params):
        return AdamW(params, self.lr, (self.beta1, self.beta2), self.eps, self.weight_decay)

    def schedule(self, total_steps):
        return LrSchedule(self.lr, total_steps, self.warmup, self.div_factor, self.final_div_factor)


def minibatches(n, batch_size, rng, min_size=1):
    """Shuffled index batches covering ``range(n)``; a trailing batch smaller
    than ``min_size`` is merged into the previous one."""
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < min_size:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def steps_per_epoch(n, batch_size, min_size=1):
    full, rest = divmod(n, batch_size)
    if rest == 0:
        return full
    return full if (full > 0 and rest < min_size) else full + 1


def check_finite(value, where):
    if not math.isfinite(value):
        raise TrainingDivergedError(f"non-finite loss {value!r} at {where}")


class Trainer:
    """AdamW under a 1cycle schedule spanning ``total_steps`` updates."""

    def __init__(self, params, optim_cfg, total_steps):
        self.optimizer = optim_cfg.optimizer(params)
        self.schedule = optim_cfg.schedule(max(1, total_steps))
        self.step_count = 0

    def step(self, loss, where="step"):
        value = loss.item()
        check_finite(value, where)
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.lr = self.schedule(min(self.step_count, self.schedule.total_steps - 1))
        try:
            self.optimizer.step()
        except FloatingPointError as exc:
            raise TrainingDivergedError(f"{exc} at {where}") from None
        self.step_count += 1
        return value


def fit_epochs(params, n, loss_fn, epochs, batch_size, optim_cfg, rng, min_batch=1, on_epoch=None):
    """Run ``epochs`` passes of ``loss_fn(indices) -> Tensor`` and return the
    mean loss per epoch. ``on_epoch(epoch, mean_loss)`` is called after each."""
    trainer = Trainer(params, optim_cfg, epochs * steps_per_epoch(n, batch_size, min_batch))
    history = []
    for epoch in range(1, epochs + 1):
        losses = []
        for b, idx in enumerate(minibatches(n, batch_size, rng, min_batch)):
            losses.append(trainer.step(loss_fn(idx), where=f"epoch {epoch}, batch {b}"))
        history.append(float(np.mean(losses)))
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return history
