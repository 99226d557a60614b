"""
Parallel-corpus file handling and the binary token-id cache.

Cache layout (little-endian): b"SRNC", uint16 version, uint32 pair count, then
per pair uint32 source length, uint32 target length and the uint32 ids.
"""

import logging
import struct
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

CACHE_MAGIC = b'SRNC'
CACHE_VERSION = 1


class CorpusError(Exception):
    """Raised for malformed or misaligned corpus data."""
    pass


def read_lines(path) -> List[str]:
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"Corpus file not found: {path}")
    with path.open('r', encoding='utf-8') as handle:
        return [line.rstrip('\r\n') for line in handle]


def read_parallel(src_path, tgt_path) -> List[Tuple[str, str]]:
    """Read two aligned files; line counts must match."""
    source_lines = read_lines(src_path)
    target_lines = read_lines(tgt_path)
    if len(source_lines) != len(target_lines):
        raise CorpusError(
            f"Misaligned corpus: {src_path} has {len(source_lines)} lines "
            f"but {tgt_path} has {len(target_lines)}"
        )
    empty = sum(1 for s, t in zip(source_lines, target_lines) if not s.strip() or not t.strip())
    if empty:
        logger.warning(f"{empty} pairs in {src_path} / {tgt_path} contain an empty side")
    return list(zip(source_lines, target_lines))


def save_cache(pairs: Sequence, path) -> None:
    """Write encoded SentencePairs to the binary cache."""
    chunks = [CACHE_MAGIC, struct.pack('<HI', CACHE_VERSION, len(pairs))]
    for pair in pairs:
        chunks.append(struct.pack('<II', len(pair.source), len(pair.target)))
        chunks.append(np.asarray(pair.source, dtype='<u4').tobytes())
        chunks.append(np.asarray(pair.target, dtype='<u4').tobytes())
    Path(path).write_bytes(b''.join(chunks))
    logger.info(f"Wrote token cache with {len(pairs)} pairs to {path}")


def load_cache(path) -> list:
    from .batching import SentencePair

    path = Path(path)
    if not path.exists():
        raise CorpusError(f"Token cache not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != CACHE_MAGIC:
        raise CorpusError(f"{path} is not a token cache (bad magic)")
    try:
        version, count = struct.unpack_from('<HI', blob, 4)
        if version != CACHE_VERSION:
            raise CorpusError(f"Unsupported token cache version {version} in {path}")
        offset = 10
        pairs = []
        for _ in range(count):
            src_len, tgt_len = struct.unpack_from('<II', blob, offset)
            offset += 8
            ids = np.frombuffer(blob, dtype='<u4', count=src_len + tgt_len, offset=offset)
            offset += 4 * (src_len + tgt_len)
            pairs.append(SentencePair(
                source=[int(i) for i in ids[:src_len]],
                target=[int(i) for i in ids[src_len:]],
            ))
    except (struct.error, ValueError) as exc:
        raise CorpusError(f"Token cache {path} is truncated: {exc}") from exc
    if offset != len(blob):
        raise CorpusError(f"Token cache {path} has {len(blob) - offset} trailing bytes")
    return pairs
