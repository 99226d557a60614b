"""
GRU cell built from tape primitives.

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    h~ = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * h~
"""

from typing import Dict, Tuple

import numpy as np

from .params import ParamStore
from .tape import ShapeError, Tape, Tensor

GRU_PARAM_NAMES = ('W_z', 'U_z', 'b_z', 'W_r', 'U_r', 'b_r', 'W_h', 'U_h', 'b_h')


def gru_shapes(prefix: str, input_size: int, hidden_size: int) -> Dict[str, Tuple[int, ...]]:
    shapes = {}
    for gate in ('z', 'r', 'h'):
        shapes[f"{prefix}.W_{gate}"] = (hidden_size, input_size)
        shapes[f"{prefix}.U_{gate}"] = (hidden_size, hidden_size)
        shapes[f"{prefix}.b_{gate}"] = (hidden_size,)
    return shapes


def gru_step(tape: Tape, params: ParamStore, prefix: str, x: Tensor, h_prev: Tensor) -> Tensor:
    W = {name: tape.param(params, f"{prefix}.{name}") for name in GRU_PARAM_NAMES}
    hidden_size, input_size = W['W_z'].shape
    if x.shape != (input_size,) or h_prev.shape != (hidden_size,):
        raise ShapeError(
            f"GRU {prefix} expects x{(input_size,)} and h{(hidden_size,)}, "
            f"got x{x.shape} and h{h_prev.shape}"
        )

    def affine(gate: str, recurrent: Tensor) -> Tensor:
        return tape.add(
            tape.add(tape.matmul(W[f"W_{gate}"], x), tape.matmul(W[f"U_{gate}"], recurrent)),
            W[f"b_{gate}"],
        )

    z = tape.sigmoid(affine('z', h_prev))
    r = tape.sigmoid(affine('r', h_prev))
    candidate = tape.tanh(affine('h', tape.mul(r, h_prev)))
    carry = tape.mul(tape.sub(np.ones(hidden_size), z), h_prev)
    return tape.add(carry, tape.mul(z, candidate))
