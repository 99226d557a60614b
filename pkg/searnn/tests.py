import itertools
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from django.test import SimpleTestCase

from corpus.vocab import BOS, EOS, PAD
from metrics.bleu import sequence_cost
from numeric_core.gradcheck import finite_difference_check
from numeric_core.params import ParamStore
from numeric_core.tape import Tape
from policies.policy import LEARNED, MIXED, REFERENCE, ROLL_OUT_STREAM, PolicyKind, derive_seed, roll_in
from seq2seq.model import ModelDims, Seq2SeqModel

from .costs import CostVector, SearnnError, compute_cost_vector
from .losses import (
    KL, LL, Sampling, SearnnConfig, cell_loss, cost_softmax, kl_loss, kl_target, ll_loss, mle_loss,
    searnn_sequence_loss,
)
from .sampling import sample_candidates

SMALL = ModelDims(src_vocab=8, tgt_vocab=8, embed=4, hidden=3)
POLICIES = (PolicyKind.reference(), PolicyKind.learned(), PolicyKind.mixed(0.5))


def _model(seed, dims=SMALL, scale=1.0):
    return Seq2SeqModel.initialize(dims, scale=scale, seed=seed)


def _sentence(rng, low, high, vocab=8):
    return [BOS] + [int(t) for t in rng.integers(4, vocab, size=rng.integers(low, high + 1))] + [EOS]


def _argmax_without_specials(scores):
    best = None
    for token, value in enumerate(scores):
        if token in (PAD, BOS):
            continue
        if best is None or value > scores[best]:
            best = token
    return best


def oracle_cost(model, source, ref, prefix, token, rollout, max_len, seed):
    """Re-simulates the whole sequence from the encoder onwards for one candidate."""
    t = len(prefix) - 1
    tape = Tape(grad_enabled=False)
    state = model.start(tape, source)
    for fed in prefix:
        _, state = model.decode_step(tape, state, fed)
    rng = np.random.default_rng(derive_seed(seed, ROLL_OUT_STREAM, t, token))
    sequence = list(prefix) + [token]
    k = 0
    while sequence[-1] != EOS and k < max_len:
        scores, state = model.decode_step(tape, state, sequence[-1])
        if rollout.kind == REFERENCE:
            from_reference = True
        elif rollout.kind == LEARNED:
            from_reference = False
        else:
            from_reference = rng.random() < rollout.p
        if from_reference:
            position = t + 2 + k
            sequence.append(ref[position] if position < len(ref) else EOS)
        else:
            sequence.append(_argmax_without_specials(scores.value))
        k += 1
    candidate = sequence[1:sequence.index(EOS)] if EOS in sequence else sequence[1:]
    return sequence_cost(candidate, ref[1:-1])


class SampleCandidatesTests(SimpleTestCase):

    def test_large_vocab_gives_25_distinct_with_gold(self):
        rng = np.random.default_rng(0)
        for _ in range(10000):
            vocab = int(rng.integers(100, 160))
            scores = rng.normal(size=vocab)
            ref = [BOS] + [int(x) for x in rng.integers(4, vocab, size=rng.integers(1, 30))] + [EOS]
            t = int(rng.integers(0, len(ref) - 1))
            candidates = sample_candidates(scores, ref, t, top_k=15, neighbors=10)
            self.assertEqual(len(candidates), 25)
            self.assertEqual(len(set(candidates)), 25)
            self.assertIn(ref[t + 1], candidates)

    def test_small_vocab_is_exhausted(self):
        scores = np.random.default_rng(1).normal(size=8)
        candidates = sample_candidates(scores, [BOS, 4, 5, 6, EOS], 1)
        self.assertEqual(sorted(candidates), list(range(8)))

    def test_top_k_comes_first_then_neighbors(self):
        scores = np.arange(30.0)
        ref = [BOS, 4, 5, 6, 7, EOS]
        candidates = sample_candidates(scores, ref, 0, top_k=3, neighbors=2)
        self.assertEqual(candidates[:3], [29, 28, 27])
        self.assertEqual(candidates[3:], [4, 26])

    def test_window_clipped_at_sentence_end(self):
        scores = np.arange(40.0)
        ref = [BOS, 4, 5, EOS]
        candidates = sample_candidates(scores, ref, 2, top_k=2, neighbors=10)
        self.assertEqual(len(candidates), 12)
        self.assertIn(EOS, candidates)
        self.assertEqual(candidates[:2], [39, 38])

    def test_ties_go_to_lower_id(self):
        scores = np.zeros(20)
        self.assertEqual(sample_candidates(scores, [BOS, 9, EOS], 0, top_k=2, neighbors=0)[:2], [0, 1])


class CostVectorTests(SimpleTestCase):

    def test_validation(self):
        with self.assertRaises(SearnnError):
            CostVector(candidates=[4, 4], costs=[0.1, 0.2])
        with self.assertRaises(SearnnError):
            CostVector(candidates=[4, 5], costs=[0.1])
        with self.assertRaises(SearnnError):
            CostVector(candidates=[4], costs=[1.5])

    def test_best_index_breaks_ties_by_token_id(self):
        vector = CostVector(candidates=[9, 5, 7], costs=[0.2, 0.2, 0.4])
        self.assertEqual(vector.best_index(), 1)
        self.assertEqual(vector.best_candidate(), 5)


class ComputeCostVectorTests(SimpleTestCase):

    def test_reference_policies_give_zero_only_to_gold(self):
        model = _model(0)
        ref = [BOS, 4, 5, 6, EOS]
        trajectory = roll_in(model, [BOS, 6, 5, EOS], ref, PolicyKind.reference(), rng_seed=0)
        for t in range(trajectory.num_steps):
            vector = compute_cost_vector(model, trajectory, t, list(range(8)), PolicyKind.reference(), 10, 0)
            self.assertEqual(vector.costs[ref[t + 1]], 0.0)
            others = [c for i, c in enumerate(vector.costs) if i != ref[t + 1]]
            self.assertTrue(all(c > 0.0 for c in others))

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(2024)
        cases = 0
        for rollin, rollout in itertools.product(POLICIES, POLICIES):
            for _ in range(23):
                seed = int(rng.integers(0, 2 ** 31))
                model = _model(seed, scale=1.5)
                source = _sentence(rng, 1, 5)
                ref = _sentence(rng, 1, 4)
                max_len = int(rng.integers(1, 7))
                trajectory = roll_in(model, source, ref, rollin, rng_seed=seed)
                for t in range(trajectory.num_steps):
                    vector = compute_cost_vector(model, trajectory, t, list(range(8)), rollout, max_len, seed)
                    prefix = trajectory.chosen_tokens[:t + 1]
                    expected = [oracle_cost(model, source, ref, prefix, a, rollout, max_len, seed) for a in range(8)]
                    self.assertEqual(vector.costs.tolist(), expected)
                cases += 1
        self.assertGreaterEqual(cases, 200)

    def test_threaded_roll_outs_match_sequential(self):
        model = _model(6)
        ref = [BOS, 4, 7, 5, EOS]
        trajectory = roll_in(model, [BOS, 5, EOS], ref, PolicyKind.mixed(0.5), rng_seed=6)
        sequential = compute_cost_vector(model, trajectory, 1, list(range(8)), PolicyKind.mixed(0.5), 8, 6)
        with ThreadPoolExecutor(max_workers=4) as executor:
            threaded = compute_cost_vector(
                model, trajectory, 1, list(range(8)), PolicyKind.mixed(0.5), 8, 6, executor=executor,
            )
        self.assertEqual(sequential.costs.tolist(), threaded.costs.tolist())
        self.assertEqual(sequential.completions, threaded.completions)

    def test_invalid_step(self):
        model = _model(0)
        trajectory = roll_in(model, [BOS, 4, EOS], [BOS, 5, EOS], PolicyKind.reference(), rng_seed=0)
        with self.assertRaises(SearnnError):
            compute_cost_vector(model, trajectory, 2, [4], PolicyKind.reference(), 5, 0)
        with self.assertRaises(SearnnError):
            compute_cost_vector(model, trajectory, 0, [], PolicyKind.reference(), 5, 0)


class CellLossTests(SimpleTestCase):

    def _scores(self, values):
        store = ParamStore()
        store.add('s', np.asarray(values, dtype=np.float64))
        return store

    def test_ll_uniform_scores(self):
        tape = Tape()
        vector = CostVector(candidates=[4, 5, 6, 7], costs=[0.5, 0.2, 0.9, 0.3])
        loss = ll_loss(tape, tape.constant(np.zeros(4)), vector)
        self.assertAlmostEqual(float(loss.value), math.log(4), places=12)

    def test_ll_confident_on_argmin(self):
        tape = Tape()
        vector = CostVector(candidates=[4, 5, 6], costs=[0.5, 0.0, 0.9])
        loss = ll_loss(tape, tape.constant([0.0, 50.0, 0.0]), vector)
        self.assertLess(float(loss.value), 1e-20)

    def test_ll_unchanged_by_monotone_cost_remap(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            costs = rng.random(6)
            scores = rng.normal(size=6)
            tape = Tape()
            first = ll_loss(tape, tape.constant(scores), CostVector(list(range(4, 10)), costs))
            second = ll_loss(tape, tape.constant(scores), CostVector(list(range(4, 10)), costs ** 3))
            self.assertEqual(float(first.value), float(second.value))

    def test_kl_target_examples(self):
        np.testing.assert_allclose(cost_softmax([0.0, 1.0, 2.0], 1.0), [0.6652, 0.2447, 0.0900], atol=1e-4)
        uniform = kl_target(CostVector([4, 5, 6, 7], [0.3] * 4), 17.0)
        np.testing.assert_allclose(uniform, 0.25, atol=1e-9)
        peaky = kl_target(CostVector([4, 5, 6], [0.4, 0.1, 0.2]), 1e6)
        np.testing.assert_allclose(peaky, [0.0, 1.0, 0.0], atol=1e-6)

    def test_kl_target_shift_invariance(self):
        costs = np.array([0.25, 0.5, 0.75, 0.0625])
        for shift in (0.125, 0.0625, 0.1875):
            self.assertEqual(cost_softmax(costs + shift, 2.0).tolist(), cost_softmax(costs, 2.0).tolist())

    def test_kl_target_normalizes(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            target = cost_softmax(rng.random(rng.integers(1, 30)), float(rng.uniform(0.1, 50.0)))
            self.assertAlmostEqual(target.sum(), 1.0, delta=1e-9)
            self.assertTrue(np.all(target >= 0.0))

    def test_kl_uniform(self):
        tape = Tape()
        loss = kl_loss(tape, tape.constant(np.full(5, 2.5)), CostVector(list(range(4, 9)), [0.4] * 5), 1.0)
        self.assertAlmostEqual(float(loss.value), math.log(5), places=12)

    def test_kl_peaky_limit_equals_ll(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            scores = rng.normal(size=6)
            vector = CostVector(list(range(4, 10)), rng.random(6))
            tape = Tape()
            kl = float(kl_loss(tape, tape.constant(scores), vector, 1e6).value)
            ll = float(ll_loss(tape, tape.constant(scores), vector).value)
            self.assertLess(abs(kl - ll), 1e-6)

    def test_gradient_identities(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            values = rng.normal(size=5)
            vector = CostVector([4, 5, 6, 7, 8], rng.random(5))
            probs = np.exp(values - values.max())
            probs /= probs.sum()

            store = self._scores(values)
            tape = Tape()
            tape.backward(ll_loss(tape, tape.param(store, 's'), vector))
            onehot = np.zeros(5)
            onehot[vector.best_index()] = 1.0
            np.testing.assert_allclose(store.grads['s'], probs - onehot, atol=1e-12)

            store = self._scores(values)
            tape = Tape()
            tape.backward(kl_loss(tape, tape.param(store, 's'), vector, 3.0))
            np.testing.assert_allclose(store.grads['s'], probs - kl_target(vector, 3.0), atol=1e-12)

            for fn in (lambda t, s=store: ll_loss(t, t.param(s, 's'), vector),
                       lambda t, s=store: kl_loss(t, t.param(s, 's'), vector, 3.0)):
                report = finite_difference_check(fn, store)
                self.assertLess(report.max_error, 1e-4)

    def test_mismatched_lengths(self):
        tape = Tape()
        with self.assertRaises(SearnnError):
            ll_loss(tape, tape.constant(np.zeros(3)), CostVector([4, 5], [0.1, 0.2]))
        with self.assertRaises(SearnnError):
            kl_loss(tape, tape.constant(np.zeros(3)), CostVector([4, 5], [0.1, 0.2]), 1.0)


class SequenceLossTests(SimpleTestCase):

    def test_reduces_to_mle(self):
        config = SearnnConfig(
            rollin=PolicyKind.reference(), rollout=PolicyKind.reference(), loss=LL,
            sampling=Sampling(full=True),
        )
        rng = np.random.default_rng(7)
        for case in range(100):
            dims = ModelDims(src_vocab=9, tgt_vocab=int(rng.integers(6, 11)), embed=3, hidden=3)
            model = _model(case, dims)
            source = _sentence(rng, 1, 5, vocab=dims.src_vocab)
            target = _sentence(rng, 1, 5, vocab=dims.tgt_vocab)
            searnn = float(searnn_sequence_loss(model, source, target, config, rng_seed=case).value)
            mle = float(mle_loss(model, source, target).value)
            self.assertLess(abs(searnn - mle), 1e-12)

    def test_single_cell_target(self):
        model = _model(8)
        config = SearnnConfig(loss=KL, alpha=2.0, sampling=Sampling(full=True))
        source, target = [BOS, 4, 5, EOS], [BOS, EOS]
        total = float(searnn_sequence_loss(model, source, target, config, rng_seed=3).value)

        tape = Tape()
        trajectory = roll_in(model, source, target, config.rollin, 3, tape=tape)
        vector = compute_cost_vector(model, trajectory, 0, list(range(8)), config.rollout, 50, 3)
        single = cell_loss(tape, trajectory.score_vectors[0], vector, config)
        self.assertEqual(total, float(single.value))

    def test_deterministic_and_thread_independent(self):
        model = _model(9)
        config = SearnnConfig(rollin=PolicyKind.mixed(0.5), rollout=PolicyKind.mixed(0.5),
                              sampling=Sampling(top_k=3, neighbors=2))
        source, target = [BOS, 6, 4, 5, EOS], [BOS, 5, 4, 6, EOS]
        first = float(searnn_sequence_loss(model, source, target, config, rng_seed=11).value)
        second = float(searnn_sequence_loss(model, source, target, config, rng_seed=11).value)
        with ThreadPoolExecutor(max_workers=3) as executor:
            threaded = float(searnn_sequence_loss(model, source, target, config, 11, executor=executor).value)
        self.assertEqual(first, second)
        self.assertEqual(first, threaded)

    def test_gradients_flow_through_scores(self):
        model = _model(10, scale=0.5)
        config = SearnnConfig(rollin=PolicyKind.reference(), rollout=PolicyKind.reference(),
                              loss=KL, alpha=3.0, sampling=Sampling(full=True))
        source, target = [BOS, 4, 6, EOS], [BOS, 7, 5, EOS]
        report = finite_difference_check(
            lambda tape: searnn_sequence_loss(model, source, target, config, 1, tape=tape), model.params,
        )
        self.assertTrue(report.passed, report.failing())

    def test_mle_uniform_model(self):
        model = _model(0)
        for name in model.params.names():
            model.params.set(name, np.zeros(model.params[name].shape))
        loss = mle_loss(model, [BOS, 4, EOS], [BOS, 5, 6, EOS])
        self.assertAlmostEqual(float(loss.value), math.log(SMALL.tgt_vocab), places=12)

    def test_mle_hand_computed(self):
        model = _model(12, scale=0.5)
        source, target = [BOS, 4, 5, EOS], [BOS, 6, 7, EOS]
        tape = Tape(grad_enabled=False)
        state = model.start(tape, source)
        total = 0.0
        for t in range(3):
            scores, state = model.decode_step(tape, state, target[t])
            s = scores.value
            total -= s[target[t + 1]] - math.log(np.exp(s).sum())
        self.assertAlmostEqual(float(mle_loss(model, source, target).value), total / 3, places=12)

    def test_config_validation(self):
        with self.assertRaises(SearnnError):
            SearnnConfig(loss='hinge')
        with self.assertRaises(SearnnError):
            SearnnConfig(alpha=0.0)
        with self.assertRaises(SearnnError):
            Sampling(top_k=0, neighbors=0)
        self.assertEqual(MIXED, SearnnConfig().rollout.kind)
