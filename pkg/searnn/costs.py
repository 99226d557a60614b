"""
Cost vectors from roll-outs.

For cell t of a roll-in trajectory, every candidate token a is forced at
position t+1, the sequence is completed by the roll-out policy and the full
sequence (roll-in prefix + a + completion) is scored against the ground truth
with 1 - smoothed BLEU.
"""

import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from corpus.vocab import TokenSequence
from metrics.bleu import sequence_cost, trim_boundaries
from policies.policy import ROLL_OUT_STREAM, PolicyKind, Trajectory, derive_seed, roll_out
from seq2seq.model import Seq2SeqModel

logger = logging.getLogger(__name__)


class SearnnError(Exception):
    """Raised for invalid SEARNN inputs."""
    pass


@dataclass
class CostVector:
    candidates: List[int]
    costs: np.ndarray
    completions: List[TokenSequence] = field(default_factory=list)

    def __post_init__(self):
        self.candidates = [int(c) for c in self.candidates]
        self.costs = np.asarray(self.costs, dtype=np.float64)
        if len(set(self.candidates)) != len(self.candidates):
            raise SearnnError("Cost vector candidates must be distinct")
        if self.costs.shape != (len(self.candidates),):
            raise SearnnError(
                f"Cost vector has {len(self.candidates)} candidates but costs of shape {self.costs.shape}"
            )
        if self.costs.size and (self.costs.min() < 0.0 or self.costs.max() > 1.0):
            raise SearnnError("Costs must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.candidates)

    def best_index(self) -> int:
        """Index of argmin cost; ties resolve to the lowest token id."""
        if not self.candidates:
            raise SearnnError("Empty candidate set")
        lowest = self.costs.min()
        tied = [i for i, cost in enumerate(self.costs) if cost == lowest]
        return min(tied, key=lambda i: self.candidates[i])

    def best_candidate(self) -> int:
        return self.candidates[self.best_index()]


def rollout_seed(rng_seed: int, t: int, token: int) -> int:
    return derive_seed(rng_seed, ROLL_OUT_STREAM, t, token)


def compute_cost_vector(
    model: Seq2SeqModel,
    trajectory: Trajectory,
    t: int,
    candidates: Sequence[int],
    rollout_policy: PolicyKind,
    max_len: int,
    rng_seed: int,
    executor: Optional[Executor] = None,
) -> CostVector:
    if not 0 <= t < trajectory.num_steps:
        raise SearnnError(f"Step {t} outside trajectory of {trajectory.num_steps} steps")
    if len(candidates) == 0:
        raise SearnnError("compute_cost_vector needs at least one candidate")

    prefix = list(trajectory.chosen_tokens[:t + 1])
    state = trajectory.states[t + 1]
    ref_suffix = trajectory.ref_target[t + 2:]
    reference = trim_boundaries(trajectory.ref_target)

    def complete(token: int):
        completion = roll_out(
            model, state, token, ref_suffix, rollout_policy, max_len,
            rollout_seed(rng_seed, t, token),
        )
        return completion, sequence_cost(trim_boundaries(prefix + completion), reference)

    runner = executor.map if executor is not None else map
    results = list(runner(complete, [int(a) for a in candidates]))
    return CostVector(
        candidates=list(candidates),
        costs=[cost for _, cost in results],
        completions=[completion for completion, _ in results],
    )
