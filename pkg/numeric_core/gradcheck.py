"""
Central finite-difference verification of analytic gradients.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from .params import ParamStore
from .tape import BackwardRule, NumericError, Tape, Tensor, backward

logger = logging.getLogger(__name__)

LossFn = Callable[[Tape], Tensor]


@dataclass
class GradCheckReport:
    errors: Dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol

    def failing(self) -> Dict[str, float]:
        return {name: err for name, err in self.errors.items() if err >= self.tol}


def relative_error(analytic, numeric) -> float:
    """Largest per-entry |a - n| / max(|a|, |n|, 1e-8)."""
    analytic = np.atleast_1d(np.asarray(analytic, dtype=np.float64))
    numeric = np.atleast_1d(np.asarray(numeric, dtype=np.float64))
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / scale, initial=0.0))


def _evaluate(fn: LossFn) -> float:
    return fn(Tape(grad_enabled=False)).item()


def finite_difference_check(
    fn: LossFn,
    params: ParamStore,
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_entries: Optional[int] = None,
    seed: int = 0,
    rules: Dict[str, BackwardRule] = None,
) -> GradCheckReport:
    """
    Compare tape gradients of `fn` against (f(θ+εe) - f(θ-εe)) / 2ε.

    `fn` builds the scalar loss on the tape it is given, reading parameters
    through `tape.param(params, name)`. With `max_entries`, a seeded random
    subset of each parameter's entries is checked. The error recorded for a
    parameter is its worst entry.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise NumericError(f"eps must lie in [1e-7, 1e-4], got {eps}")

    params.zero_grad()
    tape = Tape(rules=rules)
    backward(tape, fn(tape))
    analytic = {name: params.grads[name].copy() for name in params.names()}
    params.zero_grad()

    baseline = _evaluate(fn)
    if _evaluate(fn) != baseline:
        raise NumericError("Loss function is non-deterministic: two baseline evaluations differ")

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for name in params.names():
        value = params.params[name]
        if value.size == 0:
            continue
        flat_indices = np.arange(value.size)
        if max_entries is not None and value.size > max_entries:
            flat_indices = np.sort(rng.choice(value.size, size=max_entries, replace=False))
        numeric = np.zeros(len(flat_indices))
        expected = np.zeros(len(flat_indices))
        for position, flat in enumerate(flat_indices):
            index = np.unravel_index(flat, value.shape)
            original = value[index]
            value[index] = original + eps
            plus = _evaluate(fn)
            value[index] = original - eps
            minus = _evaluate(fn)
            value[index] = original
            numeric[position] = (plus - minus) / (2.0 * eps)
            expected[position] = analytic[name][index]
        report.errors[name] = relative_error(expected, numeric)

    if report.passed:
        logger.info(f"Gradient check passed: max relative error {report.max_error:.3e}")
    else:
        logger.warning(f"Gradient check failed for {sorted(report.failing())}")
    return report
