"""
Roll-in and roll-out policies.

A policy decides, step by step, whether the next fed token is the
ground-truth token (reference), the model's own masked argmax (learned), or a
per-step Bernoulli(p) choice between the two (mixed, p = probability of the
reference). Every random decision comes from a generator derived from
(seed, stream, keys...), so results do not depend on the order in which
roll-outs are executed.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from corpus.vocab import EOS, TokenSequence
from numeric_core.tape import Tape, Tensor
from seq2seq.model import DecoderState, Seq2SeqModel, masked_argmax

logger = logging.getLogger(__name__)

REFERENCE = 'reference'
LEARNED = 'learned'
MIXED = 'mixed'
POLICY_CHOICES = (REFERENCE, LEARNED, f"{MIXED}:<p>")

ROLL_IN_STREAM = 0
ROLL_OUT_STREAM = 1


class PolicyError(Exception):
    """Raised for malformed policy strings."""
    pass


@dataclass(frozen=True)
class PolicyKind:
    kind: str
    p: float = 0.0

    def __post_init__(self):
        if self.kind not in (REFERENCE, LEARNED, MIXED):
            raise PolicyError(f"Unknown policy kind {self.kind!r}; allowed: {', '.join(POLICY_CHOICES)}")
        if not 0.0 <= self.p <= 1.0:
            raise PolicyError(f"Mixed policy probability must be in [0, 1], got {self.p}")

    @classmethod
    def reference(cls) -> 'PolicyKind':
        return cls(REFERENCE)

    @classmethod
    def learned(cls) -> 'PolicyKind':
        return cls(LEARNED)

    @classmethod
    def mixed(cls, p: float) -> 'PolicyKind':
        return cls(MIXED, float(p))

    @property
    def needs_model(self) -> bool:
        return self.kind != REFERENCE

    def use_reference(self, rng: np.random.Generator) -> bool:
        if self.kind == REFERENCE:
            return True
        if self.kind == LEARNED:
            return False
        return bool(rng.random() < self.p)

    def __str__(self):
        return f"{MIXED}:{self.p:g}" if self.kind == MIXED else self.kind


def parse_policy(text: str) -> PolicyKind:
    """Parse "reference", "learned" or "mixed:<p>"."""
    text = str(text).strip().lower()
    if text in (REFERENCE, LEARNED):
        return PolicyKind(text)
    if text.startswith(f"{MIXED}:"):
        try:
            p = float(text.split(':', 1)[1])
        except ValueError:
            raise PolicyError(f"Invalid mixing probability in {text!r}")
        return PolicyKind.mixed(p)
    raise PolicyError(f"{text!r} is not a valid policy; allowed values: {', '.join(POLICY_CHOICES)}")


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 64-bit seed for the task identified by `keys`."""
    sequence = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))


@dataclass
class Trajectory:
    """
    Roll-in record: states[t] is the decoder state before step t, chosen_tokens[t]
    the token fed at step t and score_vectors[t] the scores it produced.
    """
    source: TokenSequence
    ref_target: TokenSequence
    states: List[DecoderState] = field(default_factory=list)
    chosen_tokens: TokenSequence = field(default_factory=list)
    score_vectors: List[Tensor] = field(default_factory=list)

    @property
    def num_steps(self) -> int:
        return len(self.chosen_tokens)


def roll_in(
    model: Seq2SeqModel,
    source: Sequence[int],
    ref_target: Sequence[int],
    policy: PolicyKind,
    rng_seed: int,
    tape: Optional[Tape] = None,
) -> Trajectory:
    """Run the decoder for T = |ref_target| - 1 steps following `policy`."""
    if tape is None:
        tape = Tape(grad_enabled=False)
    ref_target = [int(t) for t in ref_target]
    steps = len(ref_target) - 1
    rng = derive_rng(rng_seed, ROLL_IN_STREAM)

    state = model.start(tape, source)
    trajectory = Trajectory(source=list(source), ref_target=ref_target, states=[state])
    token = ref_target[0]
    for t in range(steps):
        trajectory.chosen_tokens.append(token)
        scores, state = model.decode_step(tape, state, token)
        trajectory.score_vectors.append(scores)
        trajectory.states.append(state)
        if t + 1 < steps:
            token = ref_target[t + 1] if policy.use_reference(rng) else masked_argmax(scores.value)
    return trajectory


def roll_out(
    model: Seq2SeqModel,
    state_after_a: DecoderState,
    forced_token: int,
    ref_suffix: Sequence[int],
    policy: PolicyKind,
    max_len: int,
    rng_seed: int,
) -> TokenSequence:
    """
    Complete a sequence after forcing `forced_token`.

    `state_after_a` is the decoder state that `forced_token` is fed into;
    `ref_suffix` is the ground truth aligned to the positions after it. The
    result starts with the forced token, holds at most max_len further
    tokens and ends at the first EOS.
    """
    completion = [int(forced_token)]
    if forced_token == EOS:
        return completion

    rng = np.random.default_rng(rng_seed)
    tape = Tape(grad_enabled=False)
    state = DecoderState(hidden=tape.constant(state_after_a.hidden.value))
    scores = None
    for k in range(max_len):
        if policy.needs_model:
            scores, state = model.decode_step(tape, state, completion[-1])
        if policy.use_reference(rng):
            token = int(ref_suffix[k]) if k < len(ref_suffix) else EOS
        else:
            token = masked_argmax(scores.value)
        completion.append(token)
        if token == EOS:
            break
    return completion
