"""
Sentence pairs and length-bucketed, PAD-padded batches.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from .io import CorpusError
from .vocab import BOS, EOS, PAD, TokenSequence, Vocabulary, encode_sentence

logger = logging.getLogger(__name__)

DEFAULT_BUCKET_WIDTH = 4


@dataclass(frozen=True)
class SentencePair:
    source: TokenSequence
    target: TokenSequence

    def validate(self, src_vocab_size: int, tgt_vocab_size: int) -> None:
        for side, seq, size in (('source', self.source, src_vocab_size),
                                ('target', self.target, tgt_vocab_size)):
            if len(seq) < 2 or seq[0] != BOS or seq[-1] != EOS:
                raise CorpusError(f"{side} sequence must be BOS ... EOS, got {seq}")
            if max(seq) >= size or min(seq) < 0:
                raise CorpusError(f"{side} sequence has ids outside vocabulary of size {size}")


@dataclass
class Batch:
    source_matrix: np.ndarray
    target_matrix: np.ndarray
    source_lengths: np.ndarray
    target_lengths: np.ndarray

    def __len__(self) -> int:
        return int(self.source_matrix.shape[0])

    def rows(self) -> List[SentencePair]:
        """Recover the unpadded pairs of this batch."""
        return [
            SentencePair(
                source=[int(i) for i in self.source_matrix[row, :self.source_lengths[row]]],
                target=[int(i) for i in self.target_matrix[row, :self.target_lengths[row]]],
            )
            for row in range(len(self))
        ]


def encode_pairs(lines, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> List[SentencePair]:
    return [
        SentencePair(encode_sentence(src_vocab, src), encode_sentence(tgt_vocab, tgt))
        for src, tgt in lines
    ]


def _pad(sequences: Sequence[TokenSequence]) -> np.ndarray:
    width = max(len(seq) for seq in sequences)
    matrix = np.full((len(sequences), width), PAD, dtype=np.int64)
    for row, seq in enumerate(sequences):
        matrix[row, :len(seq)] = seq
    return matrix


def collate(pairs: Sequence[SentencePair]) -> Batch:
    return Batch(
        source_matrix=_pad([p.source for p in pairs]),
        target_matrix=_pad([p.target for p in pairs]),
        source_lengths=np.array([len(p.source) for p in pairs], dtype=np.int64),
        target_lengths=np.array([len(p.target) for p in pairs], dtype=np.int64),
    )


def make_batches(
    pairs: Sequence[SentencePair],
    batch_size: int,
    seed: int,
    bucket_width: int = DEFAULT_BUCKET_WIDTH,
) -> List[Batch]:
    """
    Bucket pairs by source length, shuffle within buckets, cut into batches.

    Buckets are concatenated in length order before cutting, so every pair
    lands in exactly one batch and only the final batch may be short. The
    order of the resulting batches is then shuffled with the same generator.
    """
    if batch_size < 1:
        raise CorpusError(f"batch_size must be at least 1, got {batch_size}")
    if not pairs:
        return []

    rng = np.random.default_rng(seed)
    buckets: Dict[int, List[int]] = {}
    for index, pair in enumerate(pairs):
        buckets.setdefault(len(pair.source) // bucket_width, []).append(index)

    ordered: List[int] = []
    for key in sorted(buckets):
        members = buckets[key]
        ordered.extend(members[i] for i in rng.permutation(len(members)))

    chunks = [ordered[i:i + batch_size] for i in range(0, len(ordered), batch_size)]
    batches = [collate([pairs[i] for i in chunks[j]]) for j in rng.permutation(len(chunks))]
    logger.debug(f"Made {len(batches)} batches from {len(pairs)} pairs ({len(buckets)} buckets)")
    return batches
