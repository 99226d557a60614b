"""
Vocabulary construction and sentence encoding.

Token ids 0-3 are reserved for the special tokens so that padding and loss
masking can use positional constants everywhere else in the toolkit.
"""

import hashlib
import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List

from .io import CorpusError

logger = logging.getLogger(__name__)

PAD = 0
BOS = 1
EOS = 2
UNK = 3

SPECIAL_TOKENS = ['<pad>', '<bos>', '<eos>', '<unk>']
SPECIAL_IDS = frozenset({PAD, BOS, EOS, UNK})

TokenSequence = List[int]


def tokenize(text: str) -> List[str]:
    """NFC-normalize and split on whitespace."""
    return unicodedata.normalize('NFC', text).split()


@dataclass
class Vocabulary:
    """
    Bidirectional token <-> id mapping with the four specials at ids 0-3.

    Non-special ids are contiguous from 4 in the order they were added.
    """

    id_to_token: List[str] = field(default_factory=lambda: list(SPECIAL_TOKENS))
    token_to_id: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.id_to_token[:4] != SPECIAL_TOKENS:
            raise CorpusError("Vocabulary must start with <pad>, <bos>, <eos>, <unk>")
        self.token_to_id = {}
        for index, token in enumerate(self.id_to_token):
            if token in self.token_to_id:
                raise CorpusError(f"Duplicate vocabulary token {token!r} at id {index}")
            self.token_to_id[token] = index

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def lookup(self, token: str) -> int:
        """Id of a text token; unknown tokens and literal special strings map to UNK."""
        index = self.token_to_id.get(token, UNK)
        return UNK if index in SPECIAL_IDS else index

    def content_hash(self) -> str:
        """SHA-256 over the ordered token list; used for checkpoint compatibility."""
        digest = hashlib.sha256()
        for token in self.id_to_token:
            digest.update(token.encode('utf-8'))
            digest.update(b'\n')
        return digest.hexdigest()

    def save(self, path) -> None:
        """Write one token per line; line number equals token id."""
        path = Path(path)
        with path.open('w', encoding='utf-8', newline='\n') as handle:
            for token in self.id_to_token:
                handle.write(f"{token}\n")
        logger.info(f"Saved vocabulary of {len(self)} tokens to {path}")

    @classmethod
    def load(cls, path) -> 'Vocabulary':
        path = Path(path)
        if not path.exists():
            raise CorpusError(f"Vocabulary file not found: {path}")
        with path.open('r', encoding='utf-8') as handle:
            tokens = [line.rstrip('\n') for line in handle]
        if len(tokens) < 4:
            raise CorpusError(f"Vocabulary file {path} is missing the special tokens")
        return cls(id_to_token=tokens)


def build_vocab(lines: Iterable[str], max_size: int, min_freq: int) -> Vocabulary:
    """
    Build a vocabulary from whitespace-tokenized lines.

    Tokens are ranked by frequency, ties broken by first occurrence. Only
    tokens with frequency >= min_freq are kept and the result, specials
    included, is truncated to max_size entries.
    """
    if max_size < 4:
        raise CorpusError(f"max_size must be at least 4, got {max_size}")
    if min_freq < 1:
        raise CorpusError(f"min_freq must be at least 1, got {min_freq}")

    counts = Counter()
    first_seen = {}
    for line in lines:
        for token in tokenize(line):
            if token not in first_seen:
                first_seen[token] = len(first_seen)
            counts[token] += 1

    ranked = sorted(
        (token for token in counts if counts[token] >= min_freq and token not in SPECIAL_TOKENS),
        key=lambda token: (-counts[token], first_seen[token]),
    )
    tokens = list(SPECIAL_TOKENS) + ranked[:max_size - len(SPECIAL_TOKENS)]
    vocab = Vocabulary(id_to_token=tokens)
    logger.info(f"Built vocabulary with {len(vocab)} tokens from {len(counts)} types")
    return vocab


def encode_sentence(vocab: Vocabulary, text: str) -> TokenSequence:
    """Return [BOS, ids..., EOS]; out-of-vocabulary and special-token strings map to UNK."""
    return [BOS] + [vocab.lookup(token) for token in tokenize(text)] + [EOS]


def decode_sentence(vocab: Vocabulary, ids: Iterable[int]) -> str:
    """Inverse of encode_sentence: stops at the first EOS, drops BOS and PAD."""
    words = []
    for token_id in ids:
        token_id = int(token_id)
        if token_id == EOS:
            break
        if token_id in (BOS, PAD):
            continue
        if not 0 <= token_id < len(vocab):
            raise CorpusError(f"Token id {token_id} outside vocabulary of size {len(vocab)}")
        words.append(vocab.id_to_token[token_id])
    return ' '.join(words)
