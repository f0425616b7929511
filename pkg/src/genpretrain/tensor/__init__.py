"""Minimal float64 tensor engine: autodiff, layers, AdamW and 1cycle."""

from . import functional
from .engine import Tensor, concat, no_grad, stack, where
from .nn import Conv1d, LayerNorm, Linear, Module, MultiHeadAttention, ReLU, Sequential
from .optim import AdamW, LrSchedule, OptimState, adamw_step, onecycle_lr

__all__ = [
    "AdamW",
    "Conv1d",
    "LayerNorm",
    "Linear",
    "LrSchedule",
    "Module",
    "MultiHeadAttention",
    "OptimState",
    "ReLU",
    "Sequential",
    "Tensor",
    "adamw_step",
    "concat",
    "functional",
    "no_grad",
    "onecycle_lr",
    "stack",
    "where",
]
