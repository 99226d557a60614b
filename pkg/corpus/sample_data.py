"""
Synthetic sample data for SearnnHQ

The sequence-reversal task is the desk-scale stand-in for a low-resource
translation direction: sources are random sentences over a small word
inventory and targets are the same words in reverse order. Split sizes mimic
the small MAFAND-MT directions.
"""

import logging
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .io import CorpusError

logger = logging.getLogger(__name__)

REVERSAL_TASK = {
    'vocab_size': 20,
    'min_len': 5,
    'max_len': 12,
    'sizes': {'train': 2000, 'dev': 500, 'test': 500},
}


def make_reversal_corpus(
    vocab_size: int = REVERSAL_TASK['vocab_size'],
    min_len: int = REVERSAL_TASK['min_len'],
    max_len: int = REVERSAL_TASK['max_len'],
    sizes: Dict[str, int] = None,
    seed: int = 0,
) -> Dict[str, List[Tuple[str, str]]]:
    """Generate (source, target) text pairs per split."""
    if sizes is None:
        sizes = REVERSAL_TASK['sizes']
    if vocab_size < 1 or not 1 <= min_len <= max_len:
        raise CorpusError(
            f"Invalid reversal task: vocab_size={vocab_size}, lengths {min_len}..{max_len}"
        )

    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(vocab_size)]
    splits = {}
    for split, count in sizes.items():
        pairs = []
        for _ in range(count):
            length = int(rng.integers(min_len, max_len + 1))
            sentence = [words[i] for i in rng.integers(0, vocab_size, size=length)]
            pairs.append((' '.join(sentence), ' '.join(reversed(sentence))))
        splits[split] = pairs
    return splits


def write_corpus(splits: Dict[str, List[Tuple[str, str]]], out_dir) -> Dict[str, Tuple[Path, Path]]:
    """Write <split>.src / <split>.tgt files; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for split, pairs in splits.items():
        src_path = out_dir / f"{split}.src"
        tgt_path = out_dir / f"{split}.tgt"
        src_path.write_text(''.join(f"{s}\n" for s, _ in pairs), encoding='utf-8')
        tgt_path.write_text(''.join(f"{t}\n" for _, t in pairs), encoding='utf-8')
        written[split] = (src_path, tgt_path)
        logger.info(f"Wrote {len(pairs)} {split} pairs to {out_dir}")
    return written
