"""
GRU encoder-decoder

A bidirectional single-layer GRU encoder summarizes the source; the
concatenated final forward/backward states are projected through tanh to
initialize a single-layer GRU decoder that emits vocabulary scores at every
step. There is no attention: the decoder is conditioned only through its
initial state.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from corpus.vocab import BOS, EOS, PAD, TokenSequence
from numeric_core.gru import gru_shapes, gru_step
from numeric_core.params import ParamStore
from numeric_core.tape import Tape, Tensor

logger = logging.getLogger(__name__)

# Most negative finite score; used instead of -inf to mask PAD and BOS.
MASKED_SCORE = np.finfo(np.float64).min


class ModelError(Exception):
    """Raised for invalid model inputs or incompatible parameters."""
    pass


@dataclass(frozen=True)
class ModelDims:
    src_vocab: int
    tgt_vocab: int
    embed: int = 64
    hidden: int = 256

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        shapes = {
            'src_embed': (self.src_vocab, self.embed),
            'tgt_embed': (self.tgt_vocab, self.embed),
            'init.W': (self.hidden, 2 * self.hidden),
            'init.b': (self.hidden,),
            'out.W': (self.tgt_vocab, self.hidden),
            'out.b': (self.tgt_vocab,),
        }
        shapes.update(gru_shapes('enc_fwd', self.embed, self.hidden))
        shapes.update(gru_shapes('enc_bwd', self.embed, self.hidden))
        shapes.update(gru_shapes('dec', self.embed, self.hidden))
        return shapes

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)


@dataclass
class EncoderOutput:
    context: Tensor
    per_position_states: Optional[np.ndarray] = None


@dataclass
class DecoderState:
    hidden: Tensor


def masked_argmax(scores: np.ndarray) -> int:
    """Argmax with PAD/BOS masked out; ties resolve to the lowest token id."""
    masked = np.array(scores, dtype=np.float64, copy=True)
    masked[PAD] = MASKED_SCORE
    masked[BOS] = MASKED_SCORE
    return int(np.argmax(masked))


class Seq2SeqModel:
    """Encoder-decoder over a ParamStore; all computation goes through a Tape."""

    def __init__(self, dims: ModelDims, params: ParamStore):
        expected = dims.param_shapes()
        actual = params.shapes()
        if expected != actual:
            missing = sorted(set(expected) - set(actual))
            wrong = sorted(n for n in set(expected) & set(actual) if expected[n] != actual[n])
            raise ModelError(f"Parameters do not match {dims}: missing {missing}, mis-shaped {wrong}")
        self.dims = dims
        self.params = params

    @classmethod
    def initialize(cls, dims: ModelDims, scale: float = 0.08, seed: int = 0) -> 'Seq2SeqModel':
        params = ParamStore.initialize(dims.param_shapes(), scale=scale, seed=seed)
        logger.info(f"Initialized model {dims} with {params.num_parameters()} parameters")
        return cls(dims, params)

    def _embed(self, tape: Tape, table: str, token: int, vocab_size: int) -> Tensor:
        if not 0 <= token < vocab_size:
            raise ModelError(f"Token id {token} out of range for {table} of size {vocab_size}")
        return tape.row_select(tape.param(self.params, table), token)

    def encode(self, tape: Tape, source: Sequence[int]) -> EncoderOutput:
        if len(source) == 0:
            raise ModelError("Cannot encode an empty source sequence")
        embedded = [self._embed(tape, 'src_embed', int(t), self.dims.src_vocab) for t in source]
        zero = tape.constant(np.zeros(self.dims.hidden))

        forward_states = []
        h = zero
        for x in embedded:
            h = gru_step(tape, self.params, 'enc_fwd', x, h)
            forward_states.append(h)

        backward_states = []
        h = zero
        for x in reversed(embedded):
            h = gru_step(tape, self.params, 'enc_bwd', x, h)
            backward_states.append(h)
        backward_states.reverse()

        summary = tape.concat([forward_states[-1], backward_states[0]])
        context = tape.tanh(tape.add(
            tape.matmul(tape.param(self.params, 'init.W'), summary),
            tape.param(self.params, 'init.b'),
        ))
        per_position = np.stack([
            np.concatenate([f.value, b.value]) for f, b in zip(forward_states, backward_states)
        ])
        return EncoderOutput(context=context, per_position_states=per_position)

    def init_decoder(self, encoded: EncoderOutput) -> DecoderState:
        return DecoderState(hidden=encoded.context)

    def start(self, tape: Tape, source: Sequence[int]) -> DecoderState:
        return self.init_decoder(self.encode(tape, source))

    def decode_step(self, tape: Tape, state: DecoderState, prev_token: int) -> Tuple[Tensor, DecoderState]:
        """One decoder cell: returns (scores over the target vocabulary, next state)."""
        x = self._embed(tape, 'tgt_embed', int(prev_token), self.dims.tgt_vocab)
        hidden = gru_step(tape, self.params, 'dec', x, state.hidden)
        scores = tape.add(
            tape.matmul(tape.param(self.params, 'out.W'), hidden),
            tape.param(self.params, 'out.b'),
        )
        return scores, DecoderState(hidden=hidden)

    def greedy_decode(self, source: Sequence[int], max_len: int) -> TokenSequence:
        """[BOS, y1, ...] stopping at EOS or after max_len generated tokens."""
        if max_len < 1:
            raise ModelError(f"max_len must be at least 1, got {max_len}")
        tape = Tape(grad_enabled=False)
        state = self.start(tape, source)
        tokens = [BOS]
        for _ in range(max_len):
            scores, state = self.decode_step(tape, state, tokens[-1])
            token = masked_argmax(scores.value)
            tokens.append(token)
            if token == EOS:
                break
        return tokens


def teacher_forced_scores(model: Seq2SeqModel, tape: Tape, source: Sequence[int],
                          target: Sequence[int]) -> List[Tensor]:
    """Score vectors s_0..s_{T-1} with the gold prefix fed at every step."""
    state = model.start(tape, source)
    scores = []
    for token in target[:-1]:
        step_scores, state = model.decode_step(tape, state, token)
        scores.append(step_scores)
    return scores
