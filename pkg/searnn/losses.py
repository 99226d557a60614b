"""
Cost-sensitive cell losses and the sequence-level SEARNN and MLE objectives.

LL:  -log softmax(s)[a*], with a* the cost argmin.
KL:  cross-entropy between P_C = softmax(-alpha * c) and P_M = softmax(s).

When candidates are sub-sampled, both distributions are normalized over the
sampled candidates only. Costs are constants: gradients flow through the
scores alone.
"""

import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from numeric_core.tape import Tape, Tensor
from policies.policy import PolicyKind, roll_in
from seq2seq.model import Seq2SeqModel, teacher_forced_scores

from .costs import CostVector, SearnnError, compute_cost_vector
from .sampling import DEFAULT_NEIGHBORS, DEFAULT_TOP_K, sample_candidates

logger = logging.getLogger(__name__)

LL = 'll'
KL = 'kl'
LOSS_CHOICES = (LL, KL)


@dataclass(frozen=True)
class Sampling:
    """Full vocabulary (full=True) or top_k best + neighbors ground-truth tokens."""
    full: bool = False
    top_k: int = DEFAULT_TOP_K
    neighbors: int = DEFAULT_NEIGHBORS

    def __post_init__(self):
        if not self.full and (self.top_k < 0 or self.neighbors < 0 or self.top_k + self.neighbors < 1):
            raise SearnnError(f"Invalid sampling top_k={self.top_k}, neighbors={self.neighbors}")


@dataclass(frozen=True)
class SearnnConfig:
    rollin: PolicyKind = field(default_factory=PolicyKind.reference)
    rollout: PolicyKind = field(default_factory=lambda: PolicyKind.mixed(0.5))
    loss: str = KL
    alpha: float = 1.0
    sampling: Sampling = field(default_factory=Sampling)
    max_rollout_len: int = 50

    def __post_init__(self):
        if self.loss not in LOSS_CHOICES:
            raise SearnnError(f"Unknown loss {self.loss!r}; allowed: {', '.join(LOSS_CHOICES)}")
        if self.alpha <= 0:
            raise SearnnError(f"alpha must be positive, got {self.alpha}")
        if self.max_rollout_len < 1:
            raise SearnnError(f"max_rollout_len must be at least 1, got {self.max_rollout_len}")


def restrict(tape: Tape, scores: Tensor, candidates: Sequence[int]) -> Tensor:
    """Scores of the candidate tokens, in candidate order."""
    return tape.row_select(scores, np.asarray(candidates, dtype=np.int64))


def ll_loss(tape: Tape, scores: Tensor, cost_vector: CostVector) -> Tensor:
    if len(cost_vector) == 0:
        raise SearnnError("ll_loss needs a non-empty candidate set")
    if scores.shape != (len(cost_vector),):
        raise SearnnError(f"Scores of shape {scores.shape} do not match {len(cost_vector)} candidates")
    log_probs = tape.log_softmax(scores)
    return tape.scale(tape.row_select(log_probs, cost_vector.best_index()), -1.0)


def cost_softmax(costs, alpha: float) -> np.ndarray:
    """softmax(-alpha * costs) for an arbitrary finite cost array."""
    if alpha <= 0:
        raise SearnnError(f"alpha must be positive, got {alpha}")
    costs = np.asarray(costs, dtype=np.float64)
    if costs.size == 0 or not np.all(np.isfinite(costs)):
        raise SearnnError("Costs must be a non-empty finite vector")
    logits = -alpha * (costs - costs.min())
    weights = np.exp(logits)
    return weights / weights.sum()


def kl_target(cost_vector: CostVector, alpha: float) -> np.ndarray:
    """P_C = softmax(-alpha * costs) over the candidates."""
    return cost_softmax(cost_vector.costs, alpha)


def kl_loss(tape: Tape, scores: Tensor, cost_vector: CostVector, alpha: float) -> Tensor:
    if len(cost_vector) == 0:
        raise SearnnError("kl_loss needs a non-empty candidate set")
    if scores.shape != (len(cost_vector),):
        raise SearnnError(f"Scores of shape {scores.shape} do not match {len(cost_vector)} candidates")
    target = tape.constant(kl_target(cost_vector, alpha))
    return tape.scale(tape.sum(tape.mul(target, tape.log_softmax(scores))), -1.0)


def cell_loss(tape: Tape, scores: Tensor, cost_vector: CostVector, config: SearnnConfig) -> Tensor:
    restricted = restrict(tape, scores, cost_vector.candidates)
    if config.loss == LL:
        return ll_loss(tape, restricted, cost_vector)
    return kl_loss(tape, restricted, cost_vector, config.alpha)


def searnn_sequence_loss(
    model: Seq2SeqModel,
    source: Sequence[int],
    ref_target: Sequence[int],
    config: SearnnConfig,
    rng_seed: int,
    tape: Optional[Tape] = None,
    executor: Optional[Executor] = None,
) -> Tensor:
    """Mean over the T cells of the cost-sensitive loss built from roll-outs."""
    if tape is None:
        tape = Tape()
    trajectory = roll_in(model, source, ref_target, config.rollin, rng_seed, tape=tape)
    vocab_size = model.dims.tgt_vocab

    losses = []
    for t, scores in enumerate(trajectory.score_vectors):
        if config.sampling.full:
            candidates = list(range(vocab_size))
        else:
            candidates = sample_candidates(
                scores, trajectory.ref_target, t,
                top_k=config.sampling.top_k, neighbors=config.sampling.neighbors,
            )
        cost_vector = compute_cost_vector(
            model, trajectory, t, candidates, config.rollout,
            config.max_rollout_len, rng_seed, executor=executor,
        )
        losses.append(cell_loss(tape, scores, cost_vector, config))
    return tape.mean(losses)


def mle_loss(
    model: Seq2SeqModel,
    source: Sequence[int],
    ref_target: Sequence[int],
    tape: Optional[Tape] = None,
) -> Tensor:
    """Teacher-forced mean negative log-likelihood of the gold next tokens."""
    if tape is None:
        tape = Tape()
    scores = teacher_forced_scores(model, tape, source, ref_target)
    losses = [
        tape.scale(tape.row_select(tape.log_softmax(s), int(ref_target[t + 1])), -1.0)
        for t, s in enumerate(scores)
    ]
    return tape.mean(losses)
