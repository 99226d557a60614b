"""
Trainer - optimization loop for the MLE and SEARNN objectives

Training Flow (per step):
1. Zero gradients
2. Build the objective for every pair of the batch on its own tape
   (teacher-forced NLL, or roll-in + roll-out cost vectors + cell losses)
3. Back-propagate the batch-mean loss
4. Clip gradients to the global norm limit
5. Adam update

Every `eval_every` steps the trainer logs a train record and a dev record,
anneals the learning rate on dev BLEU and keeps the best-dev checkpoint. A
final test record is written with the best-dev parameters.
"""

import json
import logging
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from corpus.batching import Batch, SentencePair, make_batches
from corpus.vocab import Vocabulary
from metrics.bleu import corpus_bleu, strip_special
from numeric_core.tape import NumericError, Tape, backward
from policies.policy import derive_seed
from searnn.losses import SearnnConfig, mle_loss, searnn_sequence_loss
from seq2seq.model import Seq2SeqModel

from .checkpoint import CHECKPOINT_SUFFIX, save_checkpoint
from .optim import LRState, TrainingError, adam_step, anneal, clip_global_norm

logger = logging.getLogger(__name__)

MLE = 'mle'
SEARNN = 'searnn'
OBJECTIVES = (MLE, SEARNN)

EPOCH_STREAM = 2
OBJECTIVE_STREAM = 3

METRICS_FILE = 'metrics.jsonl'
BEST_CHECKPOINT = f"best{CHECKPOINT_SUFFIX}"
LAST_CHECKPOINT = f"last{CHECKPOINT_SUFFIX}"
LAST_GOOD_CHECKPOINT = f"last_good{CHECKPOINT_SUFFIX}"


@dataclass(frozen=True)
class TrainConfig:
    objective: str = MLE
    searnn: SearnnConfig = field(default_factory=SearnnConfig)
    lr: float = 1e-3
    max_steps: int = 25000
    batch_size: int = 32
    eval_every: int = 500
    anneal_factor: float = 0.5
    anneal_patience: int = 3
    lr_floor: float = 1e-6
    clip_norm: float = 5.0
    max_decode_len: int = 100
    train_eval_size: int = 100
    bucket_width: int = 4
    seed: int = 0
    threads: int = 1
    log_wall_clock: bool = False

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise TrainingError(f"Unknown objective {self.objective!r}; allowed: {', '.join(OBJECTIVES)}")
        if self.lr <= 0:
            raise TrainingError(f"lr must be positive, got {self.lr}")
        if self.max_steps < 1:
            raise TrainingError(f"max_steps must be at least 1, got {self.max_steps}")


@dataclass
class RunMetrics:
    step: int
    split: str
    loss: float
    bleu: float
    lr: float
    secs: float = 0.0

    def to_json(self) -> str:
        return json.dumps({
            'step': self.step,
            'split': self.split,
            'loss': float(self.loss),
            'bleu': float(self.bleu),
            'lr': float(self.lr),
            'secs': float(self.secs),
        })


class MetricsLog:
    """Append-only JSON-lines metrics file."""

    def __init__(self, path):
        self.path = Path(path)
        self.records: List[RunMetrics] = []

    def reset(self) -> None:
        self.path.write_text('', encoding='utf-8')
        self.records = []

    def append(self, record: RunMetrics) -> None:
        with self.path.open('a', encoding='utf-8') as handle:
            handle.write(record.to_json() + '\n')
        self.records.append(record)
        logger.info(f"[{record.split}] step {record.step}: loss {record.loss:.4f} bleu {record.bleu:.4f} lr {record.lr:g}")


@dataclass
class TrainingData:
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    train: List[SentencePair]
    dev: List[SentencePair] = field(default_factory=list)
    test: List[SentencePair] = field(default_factory=list)


@dataclass
class TrainResult:
    steps: int
    best_dev_bleu: float
    test_bleu: float
    metrics_path: Path
    best_checkpoint: Optional[Path]
    last_checkpoint: Path
    wall_clock: float


def evaluate_bleu(
    decode_fn: Callable[[Sequence[int]], Sequence[int]],
    pairs: Sequence[SentencePair],
    executor: Optional[Executor] = None,
) -> float:
    """Corpus BLEU of decode_fn(source) against the targets."""
    runner = executor.map if executor is not None else map
    hypotheses = list(runner(lambda pair: strip_special(decode_fn(pair.source)), pairs))
    references = [strip_special(pair.target) for pair in pairs]
    return corpus_bleu(hypotheses, references)


def mean_mle_loss(model: Seq2SeqModel, pairs: Sequence[SentencePair]) -> float:
    if not pairs:
        return 0.0
    tape = Tape(grad_enabled=False)
    return float(np.mean([mle_loss(model, p.source, p.target, tape=tape).item() for p in pairs]))


class Trainer:
    """
    Owns the model parameters for one run and drives the optimization loop.

    Roll-out workers (threads > 1) only read parameters; they are joined
    inside each objective evaluation, before the backward pass.
    """

    def __init__(
        self,
        config: TrainConfig,
        model: Seq2SeqModel,
        data: TrainingData,
        run_dir,
        hyperparameters: Dict = None,
    ):
        self.config = config
        self.model = model
        self.data = data
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.hyperparameters = dict(hyperparameters or {})
        self.hyperparameters.setdefault('model', model.dims.to_dict())
        self.metrics = MetricsLog(self.run_dir / METRICS_FILE)
        self.lr_state = LRState(
            lr=config.lr,
            factor=config.anneal_factor,
            patience=config.anneal_patience,
            floor=config.lr_floor,
        )
        self.dev_history: List[float] = []
        self.best_dev_bleu: Optional[float] = None
        self.best_params = None
        self.executor: Optional[Executor] = None
        self._window: List[float] = []
        self._started = 0.0
        if not data.dev:
            logger.warning(
                f"No dev split; model selection and annealing use the first "
                f"{config.train_eval_size} training pairs"
            )

    # -- helpers -----------------------------------------------------------

    def _secs(self) -> float:
        return time.perf_counter() - self._started if self.config.log_wall_clock else 0.0

    def _decode(self, source: Sequence[int]) -> Sequence[int]:
        return self.model.greedy_decode(source, self.config.max_decode_len)

    def _save(self, name: str, extra: Dict = None) -> Path:
        record = dict(self.hyperparameters)
        record['lr'] = self.lr_state.lr
        record.update(extra or {})
        return save_checkpoint(
            self.model.params, self.run_dir / name, record,
            self.data.src_vocab, self.data.tgt_vocab,
        )

    def _objective(self, tape: Tape, pair: SentencePair, step: int, row: int):
        if self.config.objective == MLE:
            return mle_loss(self.model, pair.source, pair.target, tape=tape)
        return searnn_sequence_loss(
            self.model, pair.source, pair.target, self.config.searnn,
            rng_seed=derive_seed(self.config.seed, OBJECTIVE_STREAM, step, row),
            tape=tape, executor=self.executor,
        )

    # -- one optimization step --------------------------------------------

    def _accumulate_gradients(self, batch: Batch, step: int) -> float:
        pairs = batch.rows()
        total = 0.0
        for row, pair in enumerate(pairs):
            tape = Tape()
            loss = self._objective(tape, pair, step, row)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"Non-finite loss {value} on row {row}")
            backward(tape, tape.scale(loss, 1.0 / len(pairs)))
            total += value
        return total / len(pairs)

    def train_step(self, batch: Batch, step: int) -> float:
        self.model.params.zero_grad()
        loss = self._accumulate_gradients(batch, step)
        clip_global_norm(self.model.params, self.config.clip_norm)
        adam_step(self.model.params, self.lr_state.lr)
        return loss

    # -- evaluation --------------------------------------------------------

    def evaluate(self, step: int) -> float:
        train_subset = self.data.train[:self.config.train_eval_size]
        train_loss = float(np.mean(self._window)) if self._window else 0.0
        self._window = []
        self.metrics.append(RunMetrics(
            step=step, split='train', loss=train_loss,
            bleu=evaluate_bleu(self._decode, train_subset, self.executor),
            lr=self.lr_state.lr, secs=self._secs(),
        ))

        dev_pairs = self.data.dev or train_subset
        dev_bleu = evaluate_bleu(self._decode, dev_pairs, self.executor)
        self.metrics.append(RunMetrics(
            step=step, split='dev', loss=mean_mle_loss(self.model, dev_pairs),
            bleu=dev_bleu, lr=self.lr_state.lr, secs=self._secs(),
        ))

        self.dev_history.append(dev_bleu)
        if self.best_dev_bleu is None or dev_bleu > self.best_dev_bleu:
            self.best_dev_bleu = dev_bleu
            self.best_params = self.model.params.snapshot()
            self._save(BEST_CHECKPOINT, {'dev_bleu': dev_bleu, 'step': step})
        self.lr_state.lr = anneal(self.lr_state, self.dev_history)
        return dev_bleu

    def _test(self, step: int) -> float:
        if not self.data.test:
            return 0.0
        final_params = None
        if self.best_params is not None:
            final_params = self.model.params.snapshot()
            for name in self.best_params.names():
                self.model.params.set(name, self.best_params.params[name])
        test_bleu = evaluate_bleu(self._decode, self.data.test, self.executor)
        self.metrics.append(RunMetrics(
            step=step, split='test', loss=mean_mle_loss(self.model, self.data.test),
            bleu=test_bleu, lr=self.lr_state.lr, secs=self._secs(),
        ))
        if final_params is not None:
            for name in final_params.names():
                self.model.params.set(name, final_params.params[name])
        return test_bleu

    # -- main loop ---------------------------------------------------------

    def train(self) -> TrainResult:
        config = self.config
        if not self.data.train:
            raise TrainingError("No training pairs")
        self.metrics.reset()
        self._started = time.perf_counter()
        logger.info(
            f"Training {config.objective} for {config.max_steps} steps on "
            f"{len(self.data.train)} pairs (seed {config.seed})"
        )

        pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else nullcontext()
        with pool as executor:
            self.executor = executor
            step = 0
            last_eval = 0
            epoch = 0
            try:
                while step < config.max_steps:
                    batches = make_batches(
                        self.data.train, config.batch_size,
                        seed=derive_seed(config.seed, EPOCH_STREAM, epoch),
                        bucket_width=config.bucket_width,
                    )
                    for batch in batches:
                        step += 1
                        self._window.append(self.train_step(batch, step))
                        if step % config.eval_every == 0:
                            self.evaluate(step)
                            last_eval = step
                        if step >= config.max_steps:
                            break
                    epoch += 1
            except (NumericError, TrainingError) as exc:
                path = self._save(LAST_GOOD_CHECKPOINT, {'step': step})
                logger.error(f"Training aborted at step {step}: {exc}; last good parameters in {path}")
                raise TrainingError(f"Training aborted at step {step}: {exc}") from exc

            if last_eval != step:
                self.evaluate(step)
            test_bleu = self._test(step)
            last_path = self._save(LAST_CHECKPOINT, {'step': step})
            self.executor = None

        elapsed = time.perf_counter() - self._started
        logger.info(f"Training finished: best dev BLEU {self.best_dev_bleu:.4f}, test BLEU {test_bleu:.4f}")
        return TrainResult(
            steps=step,
            best_dev_bleu=self.best_dev_bleu,
            test_bleu=test_bleu,
            metrics_path=self.metrics.path,
            best_checkpoint=self.run_dir / BEST_CHECKPOINT,
            last_checkpoint=last_path,
            wall_clock=elapsed,
        )


def train(config: TrainConfig, model: Seq2SeqModel, data: TrainingData, run_dir,
          hyperparameters: Dict = None) -> TrainResult:
    return Trainer(config, model, data, run_dir, hyperparameters).train()
