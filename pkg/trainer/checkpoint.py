"""
Binary checkpoint format (.srnn)

    b"SRNN" | uint16 version | 32-byte SHA-256 of source vocab | 32-byte SHA-256 of
    target vocab | uint32 length + UTF-8 JSON hyperparameter record | uint32
    parameter count | per parameter: uint16 name length, name, uint8 rank,
    uint32 dims, float32 values

All integers and floats are little-endian. Training runs at float64; values
are stored at float32.
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict

import numpy as np

from corpus.vocab import Vocabulary
from numeric_core.params import ParamStore
from numeric_core.tape import NumericError
from seq2seq.model import ModelDims, ModelError, Seq2SeqModel

logger = logging.getLogger(__name__)

MAGIC = b'SRNN'
FORMAT_VERSION = 1
CHECKPOINT_SUFFIX = '.srnn'


class CheckpointError(Exception):
    """Raised for unreadable or incompatible checkpoints."""
    pass


@dataclass
class Checkpoint:
    params: ParamStore
    hyperparameters: Dict[str, Any] = field(default_factory=dict)
    src_vocab_hash: str = ''
    tgt_vocab_hash: str = ''

    @property
    def dims(self) -> ModelDims:
        try:
            return ModelDims(**self.hyperparameters['model'])
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"Checkpoint hyperparameters lack a model record: {exc}") from exc

    def build_model(self) -> Seq2SeqModel:
        try:
            return Seq2SeqModel(self.dims, self.params)
        except ModelError as exc:
            raise CheckpointError(f"Checkpoint parameters do not match its model record: {exc}") from exc

    def verify_vocab(self, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> None:
        if src_vocab.content_hash() != self.src_vocab_hash:
            raise CheckpointError("Checkpoint was trained with a different source vocabulary (hash mismatch)")
        if tgt_vocab.content_hash() != self.tgt_vocab_hash:
            raise CheckpointError("Checkpoint was trained with a different target vocabulary (hash mismatch)")


def save_checkpoint(
    params: ParamStore,
    path,
    hyperparameters: Dict[str, Any],
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
) -> Path:
    path = Path(path)
    record = json.dumps(hyperparameters, sort_keys=True).encode('utf-8')
    chunks = [
        MAGIC,
        struct.pack('<H', FORMAT_VERSION),
        bytes.fromhex(src_vocab.content_hash()),
        bytes.fromhex(tgt_vocab.content_hash()),
        struct.pack('<I', len(record)),
        record,
        struct.pack('<I', len(params)),
    ]
    for name in params.names():
        value = params.params[name]
        encoded = name.encode('utf-8')
        chunks.append(struct.pack('<H', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack('<B', value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(value.astype('<f4').tobytes())

    temporary = path.with_name(path.name + '.tmp')
    temporary.write_bytes(b''.join(chunks))
    os.replace(temporary, path)
    logger.info(f"Saved checkpoint with {len(params)} parameters to {path}")
    return path


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.blob):
            raise CheckpointError("Checkpoint file is truncated")
        chunk = self.blob[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    reader = _Reader(path.read_bytes())

    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path} is not a SearnnHQ checkpoint (bad magic)")
    (version,) = reader.unpack('<H')
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    src_hash = reader.take(32).hex()
    tgt_hash = reader.take(32).hex()
    (record_len,) = reader.unpack('<I')
    try:
        hyperparameters = json.loads(reader.take(record_len).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"Corrupt hyperparameter record in {path}: {exc}") from exc

    (count,) = reader.unpack('<I')
    params = ParamStore()
    for _ in range(count):
        (name_len,) = reader.unpack('<H')
        try:
            name = reader.take(name_len).decode('utf-8')
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"Corrupt parameter name in {path}: {exc}") from exc
        (rank,) = reader.unpack('<B')
        shape = reader.unpack(f"<{rank}I")
        size = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(reader.take(4 * size), dtype='<f4').reshape(shape)
        try:
            params.add(name, values.astype(np.float64))
        except NumericError as exc:
            raise CheckpointError(f"Corrupt parameter table in {path}: {exc}") from exc
    if reader.offset != len(reader.blob):
        raise CheckpointError(f"{path} has {len(reader.blob) - reader.offset} trailing bytes")

    logger.info(f"Loaded checkpoint {path} ({len(params)} parameters)")
    return Checkpoint(params=params, hyperparameters=hyperparameters,
                      src_vocab_hash=src_hash, tgt_vocab_hash=tgt_hash)
