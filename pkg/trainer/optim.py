"""
Adam, global-norm clipping and reduce-on-plateau learning-rate annealing.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from numeric_core.params import ParamStore

logger = logging.getLogger(__name__)


class TrainingError(Exception):
    """Raised when optimization must abort (non-finite loss or gradient)."""
    pass


def adam_step(
    params: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update of every parameter, then zero the gradients."""
    for name in params.names():
        if not np.all(np.isfinite(params.grads[name])):
            logger.error(f"Non-finite gradient in parameter {name!r}; refusing update")
            raise TrainingError(f"Non-finite gradient detected in parameter {name!r}")

    params.step_count += 1
    bias1 = 1.0 - beta1 ** params.step_count
    bias2 = 1.0 - beta2 ** params.step_count
    for name in params.names():
        grad = params.grads[name]
        m = params.adam_m[name]
        v = params.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * (grad * grad)
        params.params[name] -= lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
    params.zero_grad()


def clip_global_norm(params: ParamStore, max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most max_norm; returns the pre-clip norm."""
    norm = params.grad_norm()
    if max_norm > 0 and norm > max_norm:
        params.scale_grads(max_norm / norm)
    return norm


@dataclass
class LRState:
    lr: float
    factor: float = 0.5
    patience: int = 3
    floor: float = 1e-6


def anneal(state: LRState, dev_bleu_history: Sequence[float]) -> float:
    """
    New learning rate after the latest dev evaluation.

    The rate is multiplied by `factor` each time `patience` consecutive
    evaluations pass without beating the best dev BLEU, never going below
    `floor`.
    """
    if len(dev_bleu_history) < 2:
        return state.lr
    best_index = int(np.argmax(dev_bleu_history))
    stale = len(dev_bleu_history) - 1 - best_index
    if stale > 0 and stale % state.patience == 0:
        new_lr = max(state.lr * state.factor, state.floor)
        if new_lr < state.lr:
            logger.warning(f"Dev BLEU flat for {stale} evaluations; annealing lr {state.lr:g} -> {new_lr:g}")
        return new_lr
    return state.lr
