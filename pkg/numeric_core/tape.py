"""
Reverse-mode differentiation over dense float64 arrays.

A Tape records every primitive applied while it is in gradient mode. Each
primitive has a forward computation here and a backward rule registered in
BACKWARD_RULES; `Tape.backward` replays the record in reverse creation order,
which is a reverse topological order because inputs always exist before the
nodes that consume them. Gradients reaching parameter leaves are accumulated
into the owning ParamStore.

A Tape built with grad_enabled=False evaluates the same forward code without
recording anything; that is the read-only inference path used for decoding
and roll-outs, and it produces bit-identical values.
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

DTYPE = np.float64


class NumericError(Exception):
    """Base class for numeric-core failures."""
    pass


class ShapeError(NumericError):
    pass


class NonFiniteError(NumericError):
    pass


class Tensor:
    """A value on a tape plus, in gradient mode, its inputs and gradient buffer."""

    __slots__ = ('value', 'grad', 'op', 'inputs', 'ctx', 'requires_grad', 'param_name', 'store')

    def __init__(self, value, op='leaf', inputs=(), ctx=None, requires_grad=False):
        self.value = value
        self.grad = None
        self.op = op
        self.inputs = inputs
        self.ctx = ctx
        self.requires_grad = requires_grad
        self.param_name = None
        self.store = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"


# ---------------------------------------------------------------------------
# Backward rules: rule(node, upstream_grad) -> one gradient (or None) per input
# ---------------------------------------------------------------------------

def _matmul_backward(node, g):
    a, b = (t.value for t in node.inputs)
    if b.ndim == 1:
        return np.outer(g, b), a.T @ g
    return g @ b.T, a.T @ g


def _add_backward(node, g):
    return g, g


def _sub_backward(node, g):
    return g, -g


def _mul_backward(node, g):
    a, b = (t.value for t in node.inputs)
    return g * b, g * a


def _scale_backward(node, g):
    return (g * node.ctx,)


def _sigmoid_backward(node, g):
    y = node.value
    return (g * y * (1.0 - y),)


def _tanh_backward(node, g):
    y = node.value
    return (g * (1.0 - y * y),)


def _concat_backward(node, g):
    return tuple(np.split(g, node.ctx[:-1]))


def _row_select_backward(node, g):
    source = node.inputs[0].value
    grad = np.zeros_like(source)
    np.add.at(grad, node.ctx, g)
    return (grad,)


def _log_softmax_backward(node, g):
    probs = np.exp(node.value)
    return (g - probs * g.sum(axis=-1, keepdims=True),)


def _sum_backward(node, g):
    return (np.full(node.inputs[0].shape, g, dtype=DTYPE),)


BackwardRule = Callable[[Tensor, np.ndarray], Tuple[Optional[np.ndarray], ...]]

BACKWARD_RULES: Dict[str, BackwardRule] = {
    'matmul': _matmul_backward,
    'add': _add_backward,
    'sub': _sub_backward,
    'mul': _mul_backward,
    'scale': _scale_backward,
    'sigmoid': _sigmoid_backward,
    'tanh': _tanh_backward,
    'concat': _concat_backward,
    'row_select': _row_select_backward,
    'log_softmax': _log_softmax_backward,
    'sum': _sum_backward,
}


def corrupted_rules(primitive: str, factor: float = 1.1) -> Dict[str, BackwardRule]:
    """Rule table with one backward rule scaled by `factor` (negative control)."""
    if primitive not in BACKWARD_RULES:
        raise NumericError(f"Unknown primitive {primitive!r}; known: {sorted(BACKWARD_RULES)}")
    rules = dict(BACKWARD_RULES)
    original = rules[primitive]

    def wrong(node, g):
        return tuple(None if grad is None else grad * factor for grad in original(node, g))

    rules[primitive] = wrong
    return rules


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: no overflow for large |x| and exactly 0.5 at 0
    return 0.5 * (1.0 + np.tanh(0.5 * x))


TensorLike = Union[Tensor, np.ndarray, float]


class Tape:
    """Ordered record of primitive applications for reverse accumulation."""

    def __init__(self, grad_enabled: bool = True, rules: Dict[str, BackwardRule] = None):
        self.grad_enabled = grad_enabled
        self.rules = rules if rules is not None else BACKWARD_RULES
        self.nodes: List[Tensor] = []
        self._param_nodes: Dict[Tuple[int, str], Tensor] = {}

    # -- leaves ------------------------------------------------------------

    def constant(self, value) -> Tensor:
        return Tensor(np.asarray(value, dtype=DTYPE))

    def param(self, store, name: str) -> Tensor:
        """Leaf bound to a ParamStore entry; reused for repeated lookups."""
        key = (id(store), name)
        node = self._param_nodes.get(key)
        if node is None:
            node = Tensor(store.params[name], requires_grad=self.grad_enabled)
            node.param_name = name
            node.store = store
            self._param_nodes[key] = node
            if self.grad_enabled:
                self.nodes.append(node)
        return node

    def _lift(self, x: TensorLike) -> Tensor:
        return x if isinstance(x, Tensor) else self.constant(x)

    def _record(self, op: str, value: np.ndarray, inputs: Sequence[Tensor], ctx=None) -> Tensor:
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"Non-finite output from {op}")
        if not self.grad_enabled:
            return Tensor(value, op=op)
        requires_grad = any(t.requires_grad for t in inputs)
        node = Tensor(value, op=op, inputs=tuple(inputs), ctx=ctx, requires_grad=requires_grad)
        if requires_grad:
            self.nodes.append(node)
        return node

    # -- primitives --------------------------------------------------------

    def matmul(self, a: TensorLike, b: TensorLike) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        if a.value.ndim != 2 or b.value.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        return self._record('matmul', a.value @ b.value, (a, b))

    def _elementwise(self, op: str, a: TensorLike, b: TensorLike, fn) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        if a.shape != b.shape:
            raise ShapeError(f"{op} shape mismatch: {a.shape} vs {b.shape}")
        return self._record(op, fn(a.value, b.value), (a, b))

    def add(self, a: TensorLike, b: TensorLike) -> Tensor:
        return self._elementwise('add', a, b, np.add)

    def sub(self, a: TensorLike, b: TensorLike) -> Tensor:
        return self._elementwise('sub', a, b, np.subtract)

    def mul(self, a: TensorLike, b: TensorLike) -> Tensor:
        return self._elementwise('mul', a, b, np.multiply)

    def scale(self, a: TensorLike, factor: float) -> Tensor:
        a = self._lift(a)
        return self._record('scale', a.value * factor, (a,), ctx=float(factor))

    def sigmoid(self, a: TensorLike) -> Tensor:
        a = self._lift(a)
        return self._record('sigmoid', _stable_sigmoid(a.value), (a,))

    def tanh(self, a: TensorLike) -> Tensor:
        a = self._lift(a)
        return self._record('tanh', np.tanh(a.value), (a,))

    def concat(self, parts: Sequence[TensorLike]) -> Tensor:
        parts = [self._lift(p) for p in parts]
        if not parts or any(p.value.ndim != 1 for p in parts):
            raise ShapeError(f"concat needs 1-D inputs, got {[p.shape for p in parts]}")
        offsets = np.cumsum([p.shape[0] for p in parts])
        return self._record('concat', np.concatenate([p.value for p in parts]), parts, ctx=offsets)

    def row_select(self, a: TensorLike, index) -> Tensor:
        """a[index] for an int or an integer array (embedding lookup / gather)."""
        a = self._lift(a)
        index_array = np.asarray(index)
        if index_array.size and (index_array.min() < 0 or index_array.max() >= a.shape[0]):
            raise ShapeError(f"row_select index out of range for leading dimension {a.shape[0]}")
        return self._record('row_select', np.array(a.value[index], dtype=DTYPE), (a,), ctx=index)

    def log_softmax(self, a: TensorLike) -> Tensor:
        a = self._lift(a)
        if a.value.ndim not in (1, 2) or a.shape[-1] == 0:
            raise ShapeError(f"log_softmax needs a non-empty row or matrix, got {a.shape}")
        shifted = a.value - a.value.max(axis=-1, keepdims=True)
        value = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        return self._record('log_softmax', value, (a,))

    def sum(self, a: TensorLike) -> Tensor:
        a = self._lift(a)
        return self._record('sum', np.array(a.value.sum(), dtype=DTYPE), (a,))

    # -- composites --------------------------------------------------------

    def mean(self, parts: Sequence[Tensor]) -> Tensor:
        if not parts:
            raise ShapeError("mean of an empty list")
        total = parts[0]
        for part in parts[1:]:
            total = self.add(total, part)
        return self.scale(total, 1.0 / len(parts))

    # -- reverse pass ------------------------------------------------------

    def backward(self, loss: Tensor) -> Dict[str, np.ndarray]:
        """
        Accumulate d(loss)/d(param) into every ParamStore reached by the tape.

        Returns the per-parameter gradients contributed by this call.
        """
        if not self.grad_enabled:
            raise NumericError("backward() called on a tape with gradients disabled")
        if loss.value.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            return {}

        loss.grad = np.ones_like(loss.value)
        contributed = {}
        for node in reversed(self.nodes):
            if node.grad is None:
                continue
            if node.op == 'leaf':
                if node.param_name is not None:
                    node.store.grads[node.param_name] += node.grad
                    contributed[node.param_name] = node.grad
                continue
            input_grads = self.rules[node.op](node, node.grad)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if not np.all(np.isfinite(grad)):
                    raise NonFiniteError(f"Non-finite gradient flowing out of {node.op}")
                if tensor.grad is None:
                    tensor.grad = np.array(grad, dtype=DTYPE).reshape(tensor.shape)
                else:
                    tensor.grad = tensor.grad + grad
        return contributed


def backward(tape: Tape, loss: Tensor) -> Dict[str, np.ndarray]:
    """Accumulate d(loss)/d(param) into every ParamStore read on `tape`."""
    return tape.backward(loss)
