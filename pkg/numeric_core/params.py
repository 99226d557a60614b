"""
Named float64 parameters with gradient buffers and Adam moment state.
"""

import logging
from typing import Dict, Iterator, Tuple

import numpy as np

from .tape import DTYPE, NumericError, ShapeError

logger = logging.getLogger(__name__)


class ParamStore:
    """
    Parameters, gradients and Adam moments keyed by name.

    The four maps always share one key set and per-key shapes.
    """

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.adam_m: Dict[str, np.ndarray] = {}
        self.adam_v: Dict[str, np.ndarray] = {}
        self.step_count = 0

    @classmethod
    def initialize(cls, shapes: Dict[str, Tuple[int, ...]], scale: float, seed: int) -> 'ParamStore':
        """Uniform(-scale, scale) init, drawn in sorted-name order for reproducibility."""
        rng = np.random.default_rng(seed)
        store = cls()
        for name in sorted(shapes):
            store.add(name, rng.uniform(-scale, scale, size=shapes[name]))
        return store

    def add(self, name: str, value) -> None:
        if name in self.params:
            raise NumericError(f"Parameter {name!r} already registered")
        value = np.array(value, dtype=DTYPE)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.adam_m[name] = np.zeros_like(value)
        self.adam_v[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self.params))

    def __len__(self) -> int:
        return len(self.params)

    def names(self):
        return sorted(self.params)

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: self.params[name].shape for name in self.names()}

    def num_parameters(self) -> int:
        return int(sum(value.size for value in self.params.values()))

    def set(self, name: str, value) -> None:
        """Overwrite a parameter in place, keeping its shape."""
        value = np.asarray(value, dtype=DTYPE)
        if value.shape != self.params[name].shape:
            raise ShapeError(
                f"Parameter {name!r} expects shape {self.params[name].shape}, got {value.shape}"
            )
        self.params[name][...] = value

    def zero_grad(self) -> None:
        for grad in self.grads.values():
            grad.fill(0.0)

    def scale_grads(self, factor: float) -> None:
        for grad in self.grads.values():
            grad *= factor

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.grads.values())))

    def snapshot(self) -> 'ParamStore':
        """Copy of the parameter values only (fresh gradients and moments)."""
        copy = ParamStore()
        for name in self.names():
            copy.add(name, self.params[name].copy())
        return copy

    def check_consistent(self) -> None:
        keys = set(self.params)
        for label, mapping in (('grads', self.grads), ('adam_m', self.adam_m), ('adam_v', self.adam_v)):
            if set(mapping) != keys:
                raise NumericError(f"ParamStore {label} keys differ from parameter keys")
            for name in keys:
                if mapping[name].shape != self.params[name].shape:
                    raise ShapeError(f"ParamStore {label}[{name!r}] has mismatched shape")
