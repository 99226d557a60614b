import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from corpus.batching import encode_pairs
from corpus.sample_data import make_reversal_corpus
from corpus.vocab import BOS, EOS, SPECIAL_TOKENS, Vocabulary, build_vocab
from numeric_core.params import ParamStore
from numeric_core.tape import Tape
from policies.policy import PolicyKind
from searnn.losses import KL, Sampling, SearnnConfig
from seq2seq.model import ModelDims, Seq2SeqModel

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .compare import compare_objectives
from .engine import (
    BEST_CHECKPOINT, LAST_CHECKPOINT, LAST_GOOD_CHECKPOINT, METRICS_FILE, MLE, SEARNN, TrainConfig,
    Trainer, TrainingData, TrainResult, evaluate_bleu, mean_mle_loss, train,
)
from .optim import LRState, TrainingError, adam_step, anneal, clip_global_norm


def _store(**values):
    store = ParamStore()
    for name, value in values.items():
        store.add(name, value)
    return store


def _data(seed=0):
    splits = make_reversal_corpus(vocab_size=6, min_len=2, max_len=4,
                                  sizes={'train': 12, 'dev': 4, 'test': 4}, seed=seed)
    src_vocab = build_vocab([s for s, _ in splits['train']], 100, 1)
    tgt_vocab = build_vocab([t for _, t in splits['train']], 100, 1)
    return TrainingData(
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        train=encode_pairs(splits['train'], src_vocab, tgt_vocab),
        dev=encode_pairs(splits['dev'], src_vocab, tgt_vocab),
        test=encode_pairs(splits['test'], src_vocab, tgt_vocab),
    )


def _model(data, seed=0):
    dims = ModelDims(src_vocab=len(data.src_vocab), tgt_vocab=len(data.tgt_vocab), embed=4, hidden=5)
    return Seq2SeqModel.initialize(dims, scale=0.1, seed=seed)


def _first_word_task():
    """Targets repeat the first source word, then a fixed phrase."""
    rng = np.random.default_rng(7)
    words = ['w0', 'w1', 'w2']

    def pair(first):
        rest = [words[i] for i in rng.integers(0, len(words), size=int(rng.integers(1, 3)))]
        return ' '.join([first] + rest), f"{first} x y z"

    train_lines = [pair(words[i]) for i in rng.integers(0, len(words), size=24)]
    dev_lines = [pair(words[i % len(words)]) for i in range(6)]
    src_vocab = build_vocab([s for s, _ in train_lines], 100, 1)
    tgt_vocab = build_vocab([t for _, t in train_lines], 100, 1)
    return TrainingData(
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        train=encode_pairs(train_lines, src_vocab, tgt_vocab),
        dev=encode_pairs(dev_lines, src_vocab, tgt_vocab),
        test=encode_pairs(dev_lines, src_vocab, tgt_vocab),
    )


SMALL_SEARNN = SearnnConfig(
    rollin=PolicyKind.reference(), rollout=PolicyKind.mixed(0.5),
    sampling=Sampling(top_k=2, neighbors=2), max_rollout_len=6,
)


class AdamTests(SimpleTestCase):

    def test_zero_gradient_leaves_parameters(self):
        store = _store(w=[1.0, -2.0])
        adam_step(store, lr=0.1)
        self.assertEqual(store['w'].tolist(), [1.0, -2.0])

    def test_first_step_moves_by_lr_times_sign(self):
        store = _store(w=[1.0, -2.0, 0.5])
        grad = np.array([0.3, -4.0, 1e-3])
        store.grads['w'][...] = grad
        adam_step(store, lr=0.01)
        expected = np.array([1.0, -2.0, 0.5]) - 0.01 * grad / (np.abs(grad) + 1e-8)
        np.testing.assert_allclose(store['w'], expected, rtol=1e-12)
        self.assertEqual(store.grads['w'].tolist(), [0.0, 0.0, 0.0])
        self.assertEqual(store.step_count, 1)

    def test_descends_a_quadratic(self):
        store = _store(w=[2.0, -3.0])
        losses = []
        for _ in range(50):
            tape = Tape()
            w = tape.param(store, 'w')
            loss = tape.sum(tape.mul(w, w))
            losses.append(loss.item())
            tape.backward(loss)
            adam_step(store, lr=0.01)
        self.assertTrue(all(b < a for a, b in zip(losses, losses[1:])))

    def test_non_finite_gradient_names_parameter(self):
        store = _store(a=[1.0], w=[1.0, 2.0])
        store.grads['w'][1] = np.nan
        with self.assertRaises(TrainingError) as ctx:
            adam_step(store, lr=0.1)
        self.assertIn("'w'", str(ctx.exception))
        self.assertEqual(store['w'].tolist(), [1.0, 2.0])
        self.assertEqual(store.step_count, 0)


class ClipTests(SimpleTestCase):

    def test_rescales_above_limit(self):
        store = _store(a=[0.0], b=[0.0])
        store.grads['a'][0], store.grads['b'][0] = 3.0, 4.0
        self.assertEqual(clip_global_norm(store, 1.0), 5.0)
        np.testing.assert_allclose([store.grads['a'][0], store.grads['b'][0]], [0.6, 0.8], atol=1e-15)

    def test_leaves_small_gradients(self):
        store = _store(a=[0.3])
        store.grads['a'][0] = 0.3
        clip_global_norm(store, 1.0)
        self.assertEqual(store.grads['a'].tolist(), [0.3])


class AnnealTests(SimpleTestCase):

    def test_improving_history_keeps_rate(self):
        self.assertEqual(anneal(LRState(lr=1.0), [0.1, 0.2, 0.3, 0.4]), 1.0)

    def test_flat_history_halves_after_patience(self):
        self.assertEqual(anneal(LRState(lr=1.0), [0.2, 0.2, 0.2]), 1.0)
        self.assertEqual(anneal(LRState(lr=1.0), [0.2, 0.2, 0.2, 0.2]), 0.5)

    def test_floor(self):
        self.assertEqual(anneal(LRState(lr=0.15, floor=0.1), [0.3, 0.1, 0.1, 0.1]), 0.1)
        self.assertEqual(anneal(LRState(lr=0.1, floor=0.1), [0.3, 0.1, 0.1, 0.1]), 0.1)


class CheckpointTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'model.srnn'
        self.vocab = Vocabulary(id_to_token=SPECIAL_TOKENS + ['a', 'b', 'c', 'd'])
        dims = ModelDims(src_vocab=8, tgt_vocab=8, embed=4, hidden=5)
        self.model = Seq2SeqModel.initialize(dims, scale=1.0, seed=3)
        for name in self.model.params.names():
            self.model.params.set(name, self.model.params[name].astype(np.float32))
        save_checkpoint(self.model.params, self.path, {'model': dims.to_dict(), 'lr': 0.5},
                        self.vocab, self.vocab)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_keeps_greedy_outputs(self):
        checkpoint = load_checkpoint(self.path)
        self.assertEqual(checkpoint.hyperparameters['lr'], 0.5)
        loaded = checkpoint.build_model()
        for name in self.model.params.names():
            self.assertEqual(loaded.params[name].tobytes(), self.model.params[name].tobytes())
        rng = np.random.default_rng(0)
        for _ in range(100):
            source = [BOS] + [int(t) for t in rng.integers(4, 8, size=rng.integers(1, 6))] + [EOS]
            self.assertEqual(loaded.greedy_decode(source, 10), self.model.greedy_decode(source, 10))

    def test_truncated_file(self):
        blob = self.path.read_bytes()
        self.path.write_bytes(blob[:-5])
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_bad_magic(self):
        blob = self.path.read_bytes()
        self.path.write_bytes(b'NOPE' + blob[4:])
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_vocab_mismatch(self):
        checkpoint = load_checkpoint(self.path)
        checkpoint.verify_vocab(self.vocab, self.vocab)
        other = Vocabulary(id_to_token=SPECIAL_TOKENS + ['a', 'b', 'd', 'c'])
        with self.assertRaises(CheckpointError):
            checkpoint.verify_vocab(other, self.vocab)

    def test_missing_file(self):
        with self.assertRaises(CheckpointError):
            load_checkpoint(Path(self.tmp.name) / 'absent.srnn')

    def _two_scalar_checkpoint(self):
        path = Path(self.tmp.name) / 'pq.srnn'
        save_checkpoint(_store(p=np.array([1.0]), q=np.array([2.0])), path, {}, self.vocab, self.vocab)
        blob = bytearray(path.read_bytes())
        record_len = int.from_bytes(blob[70:74], 'little')
        table = 74 + record_len + 4
        return path, blob, blob.index(b'\x01\x00q', table) + 2

    def test_undecodable_parameter_name(self):
        path, blob, offset = self._two_scalar_checkpoint()
        blob[offset] = 0xFF
        path.write_bytes(bytes(blob))
        with self.assertRaises(CheckpointError):
            load_checkpoint(path)

    def test_duplicate_parameter_name(self):
        path, blob, offset = self._two_scalar_checkpoint()
        blob[offset] = ord('p')
        path.write_bytes(bytes(blob))
        with self.assertRaises(CheckpointError) as ctx:
            load_checkpoint(path)
        self.assertIn("'p'", str(ctx.exception))


class TrainerTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def _records(self, run_dir):
        lines = (run_dir / METRICS_FILE).read_text(encoding='utf-8').splitlines()
        return [json.loads(line) for line in lines]

    def test_one_step_smoke_run(self):
        data = _data()
        config = TrainConfig(objective=MLE, max_steps=1, batch_size=4, eval_every=1)
        result = train(config, _model(data), data, self.root / 'run')
        self.assertEqual(result.steps, 1)
        splits = [r['split'] for r in self._records(self.root / 'run')]
        self.assertEqual(splits, ['train', 'dev', 'test'])
        self.assertTrue((self.root / 'run' / BEST_CHECKPOINT).exists())
        self.assertTrue((self.root / 'run' / LAST_CHECKPOINT).exists())
        self.assertEqual(list(self._records(self.root / 'run')[0]), ['step', 'split', 'loss', 'bleu', 'lr', 'secs'])

    def test_same_seed_gives_identical_metrics(self):
        config = TrainConfig(objective=SEARNN, searnn=SMALL_SEARNN, max_steps=3, batch_size=4, eval_every=2, seed=5)
        for name in ('a', 'b'):
            data = _data()
            train(config, _model(data, seed=5), data, self.root / name)
        first = (self.root / 'a' / METRICS_FILE).read_bytes()
        self.assertEqual(first, (self.root / 'b' / METRICS_FILE).read_bytes())
        self.assertEqual(
            (self.root / 'a' / LAST_CHECKPOINT).read_bytes(), (self.root / 'b' / LAST_CHECKPOINT).read_bytes(),
        )

    def test_best_checkpoint_holds_best_dev_bleu(self):
        data = _data(1)
        config = TrainConfig(objective=MLE, lr=0.05, max_steps=12, batch_size=3, eval_every=2)
        result = train(config, _model(data, seed=1), data, self.root / 'run')
        dev = [r['bleu'] for r in self._records(self.root / 'run') if r['split'] == 'dev']
        self.assertEqual(len(dev), 6)
        self.assertEqual(result.best_dev_bleu, max(dev))
        checkpoint = load_checkpoint(result.best_checkpoint)
        self.assertEqual(checkpoint.hyperparameters['dev_bleu'], max(dev))
        self.assertEqual(checkpoint.hyperparameters['step'], 2 * (dev.index(max(dev)) + 1))

    def test_trains_without_dev_split(self):
        data = _data()
        data.dev = []
        config = TrainConfig(objective=MLE, max_steps=2, batch_size=4, eval_every=2)
        result = train(config, _model(data), data, self.root / 'run')
        self.assertIsNotNone(result.best_dev_bleu)

    def test_non_finite_gradient_aborts_and_keeps_last_good(self):
        class PoisonedTrainer(Trainer):
            def _accumulate_gradients(self, batch, step):
                loss = super()._accumulate_gradients(batch, step)
                if step == 2:
                    self.model.params.grads['out.b'][0] = np.nan
                return loss

        data = _data()
        config = TrainConfig(objective=MLE, max_steps=5, batch_size=4, eval_every=10)
        trainer = PoisonedTrainer(config, _model(data), data, self.root / 'run')
        with self.assertRaises(TrainingError) as ctx:
            trainer.train()
        self.assertIn('step 2', str(ctx.exception))
        checkpoint = load_checkpoint(self.root / 'run' / LAST_GOOD_CHECKPOINT)
        self.assertEqual(checkpoint.hyperparameters['step'], 2)
        for name in checkpoint.params.names():
            self.assertTrue(np.all(np.isfinite(checkpoint.params[name])))

    def test_invalid_config(self):
        with self.assertRaises(TrainingError):
            TrainConfig(objective='reinforce')
        with self.assertRaises(TrainingError):
            TrainConfig(lr=0.0)

    def test_evaluate_bleu_of_perfect_decoder(self):
        lines = make_reversal_corpus(vocab_size=6, min_len=4, max_len=6, sizes={'dev': 5}, seed=2)['dev']
        vocab = build_vocab([s for s, _ in lines] + [t for _, t in lines], 100, 1)
        pairs = encode_pairs(lines, vocab, vocab)
        targets = {tuple(p.source): p.target for p in pairs}
        self.assertEqual(evaluate_bleu(lambda source: targets[tuple(source)], pairs), 1.0)


class LearningTests(SimpleTestCase):
    """A few hundred updates on an easy task must beat the untrained model."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def assertLearns(self, config):
        data = _first_word_task()
        dims = ModelDims(src_vocab=len(data.src_vocab), tgt_vocab=len(data.tgt_vocab), embed=6, hidden=8)
        model = Seq2SeqModel.initialize(dims, scale=0.1, seed=0)

        def decode(source):
            return model.greedy_decode(source, config.max_decode_len)

        untrained_bleu = evaluate_bleu(decode, data.dev)
        untrained_loss = mean_mle_loss(model, data.dev)

        result = train(config, model, data, self.root / config.objective)

        self.assertGreater(result.best_dev_bleu, untrained_bleu)
        self.assertGreater(evaluate_bleu(decode, data.dev), untrained_bleu)
        self.assertLess(mean_mle_loss(model, data.dev), untrained_loss)

    def test_mle_beats_untrained_model(self):
        self.assertLearns(TrainConfig(
            objective=MLE, lr=0.02, max_steps=200, batch_size=4, eval_every=50, max_decode_len=8, seed=1,
        ))

    def test_searnn_beats_untrained_model(self):
        searnn = SearnnConfig(
            rollin=PolicyKind.reference(), rollout=PolicyKind.reference(),
            loss=KL, alpha=3.0, sampling=Sampling(full=True), max_rollout_len=8,
        )
        self.assertLearns(TrainConfig(
            objective=SEARNN, searnn=searnn, lr=0.02, max_steps=150, batch_size=4, eval_every=50,
            max_decode_len=8, seed=1,
        ))


class CompareTests(SimpleTestCase):

    def _run(self, objective, seed):
        bleu = {(MLE, 0): 0.2, (MLE, 2): 0.22, (SEARNN, 0): 0.25, (SEARNN, 2): 0.27}[objective, seed]
        return TrainResult(steps=1, best_dev_bleu=bleu, test_bleu=bleu, metrics_path=Path('m'),
                           best_checkpoint=None, last_checkpoint=Path('l'), wall_clock=float(seed))

    def test_summarizes_both_objectives(self):
        report = compare_objectives(self._run, [0, 2])
        self.assertAlmostEqual(report.summaries[MLE].mean_test_bleu, 0.21)
        self.assertAlmostEqual(report.summaries[SEARNN].mean_test_bleu, 0.26)
        self.assertAlmostEqual(report.relative_improvement, 0.05 / 0.21)
        self.assertTrue(report.searnn_not_worse)
        payload = report.to_dict()
        self.assertEqual(payload['seeds'], [0, 2])
        self.assertEqual(set(payload['objectives']), {MLE, SEARNN})
        self.assertEqual(payload['objectives'][MLE]['test_bleu'], {'0': 0.2, '2': 0.22})

    def test_needs_seeds(self):
        with self.assertRaises(ValueError):
            compare_objectives(self._run, [])
