"""
Gradient-check suite: every tape primitive plus the composed GRU, encoder,
decoder and losses, each checked against central finite differences over a
set of random seeds.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from corpus.vocab import BOS, EOS
from numeric_core.gradcheck import GradCheckReport, LossFn, finite_difference_check
from numeric_core.gru import gru_shapes, gru_step
from numeric_core.params import ParamStore
from numeric_core.tape import BackwardRule, Tape, Tensor
from policies.policy import PolicyKind, derive_seed
from searnn.costs import CostVector
from searnn.losses import KL, SearnnConfig, Sampling, kl_loss, ll_loss, mle_loss, searnn_sequence_loss
from seq2seq.model import ModelDims, Seq2SeqModel

logger = logging.getLogger(__name__)

GRADCHECK_INIT_SCALE = 0.5


@dataclass(frozen=True)
class CheckDims:
    src_vocab: int
    tgt_vocab: int
    embed: int
    hidden: int
    max_entries: Optional[int] = None

    def model_dims(self) -> ModelDims:
        return ModelDims(self.src_vocab, self.tgt_vocab, embed=self.embed, hidden=self.hidden)


DIMS = {
    'small': CheckDims(src_vocab=7, tgt_vocab=8, embed=4, hidden=3),
    'medium': CheckDims(src_vocab=12, tgt_vocab=12, embed=8, hidden=6, max_entries=25),
}

Case = Tuple[ParamStore, LossFn]


def _store(rng: np.random.Generator, **shapes) -> ParamStore:
    store = ParamStore()
    for name, shape in shapes.items():
        store.add(name, rng.normal(size=shape))
    return store


def _projection(tape: Tape, value: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar <value, weights> with fixed random weights."""
    return tape.sum(tape.mul(value, tape.constant(weights)))


def _unary_case(op: str) -> Callable[[np.random.Generator, CheckDims], Case]:
    def build(rng, dims):
        store = _store(rng, a=(5,))
        weights = rng.normal(size=5)

        def fn(tape):
            if op == 'scale':
                out = tape.scale(tape.param(store, 'a'), -1.7)
            else:
                out = getattr(tape, op)(tape.param(store, 'a'))
            return _projection(tape, out, weights)
        return store, fn
    return build


def _binary_case(op: str) -> Callable[[np.random.Generator, CheckDims], Case]:
    def build(rng, dims):
        store = _store(rng, a=(5,), b=(5,))
        weights = rng.normal(size=5)

        def fn(tape):
            out = getattr(tape, op)(tape.param(store, 'a'), tape.param(store, 'b'))
            return _projection(tape, out, weights)
        return store, fn
    return build


def _matmul_case(rng, dims):
    store = _store(rng, A=(3, 4), B=(4, 2), v=(4,))
    w_matrix = rng.normal(size=(3, 2))
    w_vector = rng.normal(size=3)

    def fn(tape):
        A = tape.param(store, 'A')
        return tape.add(
            _projection(tape, tape.matmul(A, tape.param(store, 'B')), w_matrix),
            _projection(tape, tape.matmul(A, tape.param(store, 'v')), w_vector),
        )
    return store, fn


def _concat_case(rng, dims):
    store = _store(rng, a=(3,), b=(4,))
    weights = rng.normal(size=7)

    def fn(tape):
        return _projection(tape, tape.concat([tape.param(store, 'a'), tape.param(store, 'b')]), weights)
    return store, fn


def _row_select_case(rng, dims):
    store = _store(rng, E=(6, 4))
    index = np.array([1, 3, 1])
    w_rows = rng.normal(size=(3, 4))
    w_row = rng.normal(size=4)

    def fn(tape):
        E = tape.param(store, 'E')
        return tape.add(
            _projection(tape, tape.row_select(E, index), w_rows),
            _projection(tape, tape.row_select(E, 5), w_row),
        )
    return store, fn


def _log_softmax_case(rng, dims):
    store = _store(rng, a=(6,))
    weights = rng.normal(size=6)

    def fn(tape):
        return _projection(tape, tape.log_softmax(tape.param(store, 'a')), weights)
    return store, fn


def _sum_case(rng, dims):
    store = _store(rng, a=(5,))

    def fn(tape):
        a = tape.param(store, 'a')
        return tape.sum(tape.mul(a, a))
    return store, fn


def _gru_case(rng, dims):
    store = ParamStore()
    for name, shape in sorted(gru_shapes('cell', dims.embed, dims.hidden).items()):
        store.add(name, rng.uniform(-GRADCHECK_INIT_SCALE, GRADCHECK_INIT_SCALE, size=shape))
    store.add('x', rng.normal(size=dims.embed))
    store.add('h', rng.normal(size=dims.hidden))
    weights = rng.normal(size=dims.hidden)

    def fn(tape):
        h = gru_step(tape, store, 'cell', tape.param(store, 'x'), tape.param(store, 'h'))
        return _projection(tape, h, weights)
    return store, fn


def _model(rng, dims) -> Seq2SeqModel:
    return Seq2SeqModel.initialize(dims.model_dims(), scale=GRADCHECK_INIT_SCALE, seed=int(rng.integers(2**31)))


def _sentence(rng, vocab_size: int, length: int):
    return [BOS] + [int(t) for t in rng.integers(4, vocab_size, size=length)] + [EOS]


def _encoder_case(rng, dims):
    model = _model(rng, dims)
    source = _sentence(rng, dims.src_vocab, 4)
    weights = rng.normal(size=dims.hidden)

    def fn(tape):
        return _projection(tape, model.encode(tape, source).context, weights)
    return model.params, fn


def _decoder_case(rng, dims):
    model = _model(rng, dims)
    source = _sentence(rng, dims.src_vocab, 3)
    target = _sentence(rng, dims.tgt_vocab, 2)
    weights = [rng.normal(size=dims.tgt_vocab) for _ in target[:-1]]

    def fn(tape):
        state = model.start(tape, source)
        total = None
        for token, w in zip(target[:-1], weights):
            scores, state = model.decode_step(tape, state, token)
            term = _projection(tape, scores, w)
            total = term if total is None else tape.add(total, term)
        return total
    return model.params, fn


def _mle_case(rng, dims):
    model = _model(rng, dims)
    pairs = [(_sentence(rng, dims.src_vocab, 3), _sentence(rng, dims.tgt_vocab, 3)),
             (_sentence(rng, dims.src_vocab, 2), _sentence(rng, dims.tgt_vocab, 4))]

    def fn(tape):
        return tape.mean([mle_loss(model, source, target, tape=tape) for source, target in pairs])
    return model.params, fn


def _cost_vector(rng, size: int) -> CostVector:
    costs = rng.uniform(0.0, 1.0, size=size)
    return CostVector(candidates=list(range(size)), costs=costs)


def _ll_case(rng, dims):
    store = _store(rng, s=(6,))
    cost_vector = _cost_vector(rng, 6)

    def fn(tape):
        return ll_loss(tape, tape.param(store, 's'), cost_vector)
    return store, fn


def _kl_case(rng, dims):
    store = _store(rng, s=(6,))
    cost_vector = _cost_vector(rng, 6)

    def fn(tape):
        return kl_loss(tape, tape.param(store, 's'), cost_vector, alpha=1.3)
    return store, fn


def _searnn_case(rng, dims):
    model = _model(rng, dims)
    source = _sentence(rng, dims.src_vocab, 3)
    target = _sentence(rng, dims.tgt_vocab, 3)
    # Reference roll-in/roll-out keep the costs independent of the parameters.
    config = SearnnConfig(
        rollin=PolicyKind.reference(), rollout=PolicyKind.reference(),
        loss=KL, alpha=1.0, sampling=Sampling(full=True),
    )
    seed = int(rng.integers(2**31))

    def fn(tape):
        return searnn_sequence_loss(model, source, target, config, rng_seed=seed, tape=tape)
    return model.params, fn


LAYERS: Dict[str, Callable[[np.random.Generator, CheckDims], Case]] = {
    'matmul': _matmul_case,
    'add': _binary_case('add'),
    'sub': _binary_case('sub'),
    'mul': _binary_case('mul'),
    'scale': _unary_case('scale'),
    'sigmoid': _unary_case('sigmoid'),
    'tanh': _unary_case('tanh'),
    'concat': _concat_case,
    'row_select': _row_select_case,
    'log_softmax': _log_softmax_case,
    'sum': _sum_case,
    'gru_step': _gru_case,
    'encoder': _encoder_case,
    'decoder': _decoder_case,
    'mle_loss': _mle_case,
    'll_loss': _ll_case,
    'kl_loss': _kl_case,
    'searnn_loss': _searnn_case,
}


def run_gradcheck_suite(
    seeds: Sequence[int],
    dims: str = 'small',
    layers: Optional[Sequence[str]] = None,
    rules: Dict[str, BackwardRule] = None,
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> Dict[str, GradCheckReport]:
    """Per-layer reports holding, for every parameter, the worst error over all seeds."""
    check_dims = DIMS[dims]
    reports = {}
    for layer in (layers or list(LAYERS)):
        merged = GradCheckReport(tol=tol)
        for seed in seeds:
            rng = np.random.default_rng(derive_seed(seed, len(layer), *layer.encode('utf-8')))
            store, fn = LAYERS[layer](rng, check_dims)
            report = finite_difference_check(
                fn, store, eps=eps, tol=tol,
                max_entries=check_dims.max_entries, seed=seed, rules=rules,
            )
            for name, error in report.errors.items():
                merged.errors[name] = max(merged.errors.get(name, 0.0), error)
        reports[layer] = merged
        logger.info(f"Gradient check {layer}: max relative error {merged.max_error:.3e}")
    return reports
