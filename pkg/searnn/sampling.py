"""
Candidate sub-sampling for a decoder cell: the best-scored tokens plus the
ground-truth tokens around the current position.
"""

from typing import List, Sequence

import numpy as np

DEFAULT_TOP_K = 15
DEFAULT_NEIGHBORS = 10


def neighbor_window(t: int, neighbors: int, ref_len: int) -> range:
    """Positions t+1-floor(n/2) .. t+ceil(n/2), clipped to [1, ref_len-1]."""
    low = max(1, t + 1 - neighbors // 2)
    high = min(ref_len - 1, t + (neighbors + 1) // 2)
    return range(low, high + 1)


def sample_candidates(
    scores_t,
    ref_target: Sequence[int],
    t: int,
    top_k: int = DEFAULT_TOP_K,
    neighbors: int = DEFAULT_NEIGHBORS,
) -> List[int]:
    """
    Distinct candidate token ids for cell t.

    Order: top_k best scores (ties to the lower id), ground-truth neighbors in
    position order, the gold next token, then further best-scored tokens until
    min(top_k + neighbors, |vocab|) candidates are collected.
    """
    scores = np.asarray(getattr(scores_t, 'value', scores_t), dtype=np.float64)
    order = np.argsort(-scores, kind='stable')
    limit = min(top_k + neighbors, scores.shape[0])

    chosen: List[int] = []
    seen = set()

    def take(token: int) -> None:
        token = int(token)
        if token not in seen:
            seen.add(token)
            chosen.append(token)

    for token in order[:top_k]:
        take(token)
    for position in neighbor_window(t, neighbors, len(ref_target)):
        take(ref_target[position])
    take(ref_target[t + 1])
    for token in order:
        if len(chosen) >= limit:
            break
        take(token)
    return chosen
