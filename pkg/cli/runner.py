"""
Shared plumbing for the management commands: config resolution, corpus
loading, model/checkpoint wiring and the exception -> exit code mapping.
"""

import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from django.core.management.base import CommandError
from rest_framework import serializers

from corpus.batching import SentencePair, encode_pairs
from corpus.io import CorpusError, read_parallel
from corpus.vocab import Vocabulary, build_vocab
from metrics.bleu import MetricsError
from numeric_core.tape import NumericError
from policies.policy import PolicyError
from searnn.costs import SearnnError
from searnn.losses import SearnnConfig, Sampling
from seq2seq.model import ModelDims, ModelError, Seq2SeqModel
from trainer.checkpoint import Checkpoint, CheckpointError, load_checkpoint
from trainer.engine import TrainConfig, TrainingData, TrainResult, Trainer
from trainer.optim import TrainingError

from .serializers import FULL, RunConfigSerializer, flatten_errors, set_override

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

RESOLVED_CONFIG = 'config.resolved.json'
SRC_VOCAB_FILE = 'src.vocab'
TGT_VOCAB_FILE = 'tgt.vocab'


@contextmanager
def command_errors():
    """Translate toolkit exceptions into CommandError with the documented exit codes."""
    try:
        yield
    except serializers.ValidationError as exc:
        raise CommandError(
            "Invalid configuration:\n  " + "\n  ".join(flatten_errors(exc.detail)),
            returncode=EXIT_CONFIG,
        ) from exc
    except (PolicyError, SearnnError) as exc:
        raise CommandError(f"Invalid configuration: {exc}", returncode=EXIT_CONFIG) from exc
    except (CorpusError, CheckpointError, MetricsError, ModelError, FileNotFoundError) as exc:
        raise CommandError(f"Data error: {exc}", returncode=EXIT_DATA) from exc
    except (NumericError, TrainingError) as exc:
        raise CommandError(f"Numeric failure: {exc}", returncode=EXIT_NUMERIC) from exc


def parse_assignment(text: str) -> Tuple[str, object]:
    """"section.key=value" with a JSON value, falling back to the raw string."""
    if '=' not in text:
        raise serializers.ValidationError({'config': [f"Override {text!r} must look like section.key=value."]})
    key, raw_value = text.split('=', 1)
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    return key.strip(), value


def read_config_file(path) -> Dict:
    path = Path(path)
    if not path.is_file():
        raise serializers.ValidationError({'config': [f"Config file not found: {path}"]})
    try:
        raw = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as exc:
        raise serializers.ValidationError({'config': [f"{path} is not valid JSON: {exc}"]}) from exc
    if not isinstance(raw, dict):
        raise serializers.ValidationError({'config': [f"{path} must contain a JSON object."]})
    return raw


@dataclass
class RunConfig:
    """Validated run configuration plus its fully materialized JSON form."""

    values: Dict
    resolved: Dict

    @property
    def output_dir(self) -> Path:
        return Path(self.values['output_dir'])

    @property
    def seed(self) -> int:
        return self.values['seed']

    def model_dims(self, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> ModelDims:
        model = self.values['model']
        return ModelDims(len(src_vocab), len(tgt_vocab), embed=model['embed'], hidden=model['hidden'])

    def searnn_config(self) -> SearnnConfig:
        section = self.values['searnn']
        return SearnnConfig(
            rollin=section['rollin'],
            rollout=section['rollout'],
            loss=section['loss'],
            alpha=section['alpha'],
            sampling=Sampling(
                full=section['sampling'] == FULL,
                top_k=section['top_k'],
                neighbors=section['neighbors'],
            ),
            max_rollout_len=section['max_rollout_len'],
        )

    def train_config(self, objective: Optional[str] = None, seed: Optional[int] = None) -> TrainConfig:
        train = self.values['train']
        return TrainConfig(
            objective=objective or train['objective'],
            searnn=self.searnn_config(),
            lr=train['lr'],
            max_steps=train['max_steps'],
            batch_size=train['batch_size'],
            eval_every=train['eval_every'],
            anneal_factor=train['anneal_factor'],
            anneal_patience=train['anneal_patience'],
            lr_floor=train['lr_floor'],
            clip_norm=train['clip_norm'],
            max_decode_len=train['max_decode_len'],
            train_eval_size=train['train_eval_size'],
            bucket_width=self.values['data']['bucket_width'],
            seed=self.seed if seed is None else seed,
            threads=train['threads'],
            log_wall_clock=train['log_wall_clock'],
        )


def resolve_run_config(raw: Dict, overrides: Sequence[str] = ()) -> RunConfig:
    raw = json.loads(json.dumps(raw))
    for assignment in overrides:
        key, value = parse_assignment(assignment)
        set_override(raw, key, value)
    serializer = RunConfigSerializer(data=raw)
    serializer.is_valid(raise_exception=True)
    return RunConfig(values=serializer.validated_data, resolved=serializer.data)


def write_resolved(config: RunConfig, run_dir: Path, changes: Dict[str, object] = None) -> Path:
    """Persist the resolved config; `changes` maps dotted keys to per-run values."""
    resolved = json.loads(json.dumps(config.resolved))
    for key, value in (changes or {}).items():
        set_override(resolved, key, value)
    path = Path(run_dir) / RESOLVED_CONFIG
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(resolved, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return path


def load_pairs(src_vocab: Vocabulary, tgt_vocab: Vocabulary, src_path, tgt_path) -> List[SentencePair]:
    if src_path is None:
        return []
    return encode_pairs(read_parallel(src_path, tgt_path), src_vocab, tgt_vocab)


def load_training_data(config: RunConfig, run_dir: Path) -> TrainingData:
    """Read every split, build (or load) vocabularies and keep copies in run_dir."""
    data = config.values['data']
    train_lines = read_parallel(data['train_src'], data['train_tgt'])
    if not train_lines:
        raise CorpusError(f"Training corpus {data['train_src']} is empty")
    if data['src_vocab'] is not None:
        src_vocab = Vocabulary.load(data['src_vocab'])
        tgt_vocab = Vocabulary.load(data['tgt_vocab'])
    else:
        src_vocab = build_vocab([s for s, _ in train_lines], data['vocab_size'], data['min_freq'])
        tgt_vocab = build_vocab([t for _, t in train_lines], data['vocab_size'], data['min_freq'])

    run_dir.mkdir(parents=True, exist_ok=True)
    src_vocab.save(run_dir / SRC_VOCAB_FILE)
    tgt_vocab.save(run_dir / TGT_VOCAB_FILE)
    return TrainingData(
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        train=encode_pairs(train_lines, src_vocab, tgt_vocab),
        dev=load_pairs(src_vocab, tgt_vocab, data['dev_src'], data['dev_tgt']),
        test=load_pairs(src_vocab, tgt_vocab, data['test_src'], data['test_tgt']),
    )


def run_training(config: RunConfig, run_dir: Path, objective: Optional[str] = None,
                 seed: Optional[int] = None) -> TrainResult:
    run_dir = Path(run_dir)
    train_config = config.train_config(objective=objective, seed=seed)
    data = load_training_data(config, run_dir)
    dims = config.model_dims(data.src_vocab, data.tgt_vocab)
    model = Seq2SeqModel.initialize(dims, scale=config.values['model']['init_scale'], seed=train_config.seed)
    hyperparameters = {
        'model': dims.to_dict(),
        'objective': train_config.objective,
        'seed': train_config.seed,
        'vocab': {
            'src': str((run_dir / SRC_VOCAB_FILE).resolve()),
            'tgt': str((run_dir / TGT_VOCAB_FILE).resolve()),
        },
    }
    return Trainer(train_config, model, data, run_dir, hyperparameters).train()


def load_translation_assets(checkpoint_path, src_vocab_path=None,
                            tgt_vocab_path=None) -> Tuple[Checkpoint, Seq2SeqModel, Vocabulary, Vocabulary]:
    """Checkpoint, model and the vocabularies it was trained with (hash-verified)."""
    checkpoint = load_checkpoint(checkpoint_path)
    recorded = checkpoint.hyperparameters.get('vocab', {})
    base = Path(checkpoint_path).resolve().parent
    src_path = src_vocab_path or recorded.get('src') or base / SRC_VOCAB_FILE
    tgt_path = tgt_vocab_path or recorded.get('tgt') or base / TGT_VOCAB_FILE
    src_vocab = Vocabulary.load(src_path)
    tgt_vocab = Vocabulary.load(tgt_path)
    checkpoint.verify_vocab(src_vocab, tgt_vocab)
    return checkpoint, checkpoint.build_model(), src_vocab, tgt_vocab
