"""
BLEU scoring over token ids.

Scores come from sacrebleu with tokenization disabled: every sequence is
passed as its space-joined token ids, so n-grams are id n-grams.
Sentence-level BLEU is smoothed (add-one on numerator and denominator for
n >= 2, exact unigram precision) and drives the roll-out costs. Corpus-level
BLEU is the standard unsmoothed BLEU-4 used for evaluation.
"""

from collections import Counter
from typing import Iterable, List, Sequence

from sacrebleu.metrics import BLEU

from corpus.vocab import BOS, EOS, PAD

MAX_ORDER = 4

SMOOTHED_BLEU = BLEU(
    tokenize='none', smooth_method='add-k', smooth_value=1,
    max_ngram_order=MAX_ORDER, effective_order=False,
)
CORPUS_BLEU = BLEU(tokenize='none', smooth_method='none', max_ngram_order=MAX_ORDER, effective_order=False)

# sacrebleu reports percentages via exp(mean log precision); 14 digits drops
# the residue so identical sequences score exactly 1.
SCORE_DIGITS = 14


class MetricsError(Exception):
    """Raised for invalid metric inputs."""
    pass


def strip_special(seq: Iterable[int]) -> List[int]:
    """Tokens before the first EOS, without BOS and PAD."""
    out = []
    for token in seq:
        token = int(token)
        if token == EOS:
            break
        if token in (BOS, PAD):
            continue
        out.append(token)
    return out


def trim_boundaries(seq: Iterable[int]) -> List[int]:
    """Drop a leading BOS and cut at the first EOS; every other token is kept."""
    tokens = [int(t) for t in seq]
    if tokens and tokens[0] == BOS:
        tokens = tokens[1:]
    if EOS in tokens:
        tokens = tokens[:tokens.index(EOS)]
    return tokens


def ngram_counts(seq: Sequence[int], n: int) -> Counter:
    if not 1 <= n <= MAX_ORDER:
        raise MetricsError(f"n-gram order must be in 1..{MAX_ORDER}, got {n}")
    seq = tuple(seq)
    if n == 1:
        return Counter(seq)
    return Counter(seq[i:i + n] for i in range(len(seq) - n + 1))


def _as_line(seq: Sequence[int]) -> str:
    return ' '.join(str(int(token)) for token in seq)


def _fraction(metric: BLEU, candidates: Sequence[Sequence[int]], references: Sequence[Sequence[int]]) -> float:
    result = metric.corpus_score(
        [_as_line(candidate) for candidate in candidates],
        [[_as_line(reference) for reference in references]],
    )
    return min(1.0, max(0.0, round(result.score / 100.0, SCORE_DIGITS)))


def smoothed_sentence_bleu(candidate: Sequence[int], reference: Sequence[int]) -> float:
    """
    Add-one smoothed BLEU-4 of one candidate against one reference.

    Both inputs must already be stripped of BOS/EOS/PAD. An empty candidate
    scores 0.
    """
    if len(candidate) == 0:
        return 0.0
    return _fraction(SMOOTHED_BLEU, [candidate], [reference])


def sequence_cost(candidate: Sequence[int], reference: Sequence[int]) -> float:
    """1 - smoothed BLEU; zero exactly when the candidate equals the reference."""
    return 1.0 - smoothed_sentence_bleu(candidate, reference)


def corpus_bleu(candidates: Sequence[Sequence[int]], references: Sequence[Sequence[int]]) -> float:
    """Unsmoothed corpus BLEU-4 with pooled n-gram counts and corpus brevity penalty."""
    if len(candidates) != len(references):
        raise MetricsError(
            f"corpus_bleu needs parallel lists, got {len(candidates)} candidates "
            f"and {len(references)} references"
        )
    if sum(len(candidate) for candidate in candidates) == 0:
        return 0.0
    return _fraction(CORPUS_BLEU, candidates, references)


def sentence_bleu(candidate: Sequence[int], reference: Sequence[int]) -> float:
    """Unsmoothed BLEU-4 of a single pair."""
    return corpus_bleu([candidate], [reference])
