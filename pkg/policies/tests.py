import numpy as np
from django.test import SimpleTestCase

from corpus.vocab import BOS, EOS
from numeric_core.tape import Tape
from seq2seq.model import DecoderState, ModelDims, Seq2SeqModel

from .policy import (
    MIXED, REFERENCE, PolicyError, PolicyKind, derive_rng, derive_seed, parse_policy, roll_in, roll_out,
)

DIMS = ModelDims(src_vocab=8, tgt_vocab=8, embed=4, hidden=3)
REF = [BOS, 4, 5, 6, 7, EOS]


def _model(seed, scale=1.0):
    return Seq2SeqModel.initialize(DIMS, scale=scale, seed=seed)


def _biased(token):
    model = _model(0)
    for name in model.params.names():
        model.params.set(name, np.zeros(model.params[name].shape))
    if token is not None:
        bias = np.zeros(DIMS.tgt_vocab)
        bias[token] = 3.0
        model.params.set('out.b', bias)
    return model


def _state(model, source=(BOS, 4, EOS)):
    return model.start(Tape(grad_enabled=False), list(source))


class PolicyKindTests(SimpleTestCase):

    def test_parse_round_trips(self):
        for text in ('reference', 'learned', 'mixed:0.5', 'mixed:0.25', 'mixed:1'):
            self.assertEqual(parse_policy(str(parse_policy(text))), parse_policy(text))
        self.assertEqual(parse_policy('mixed:0.3'), PolicyKind(MIXED, 0.3))
        self.assertEqual(parse_policy(' Reference '), PolicyKind(REFERENCE))

    def test_invalid_policy_lists_allowed_values(self):
        with self.assertRaises(PolicyError) as ctx:
            parse_policy('oracle')
        for allowed in ('reference', 'learned', 'mixed:<p>'):
            self.assertIn(allowed, str(ctx.exception))
        with self.assertRaises(PolicyError):
            parse_policy('mixed:abc')

    def test_probability_range(self):
        with self.assertRaises(PolicyError):
            PolicyKind.mixed(1.5)
        with self.assertRaises(PolicyError):
            PolicyKind.mixed(-0.1)

    def test_mixed_draw_frequency(self):
        for p in (0.2, 0.5, 0.9):
            policy = PolicyKind.mixed(p)
            rng = derive_rng(17, 0)
            fraction = np.mean([policy.use_reference(rng) for _ in range(10000)])
            self.assertLess(abs(fraction - p), 0.02)

    def test_derived_seeds(self):
        self.assertEqual(derive_seed(3, 1, 2, 7), derive_seed(3, 1, 2, 7))
        seeds = {derive_seed(3, 1, t, a) for t in range(10) for a in range(10)}
        self.assertEqual(len(seeds), 100)
        self.assertNotEqual(derive_seed(3, 0), derive_seed(4, 0))


class RollInTests(SimpleTestCase):

    def test_reference_is_teacher_forcing(self):
        trajectory = roll_in(_model(1), [BOS, 4, 5, EOS], REF, PolicyKind.reference(), rng_seed=0)
        self.assertEqual(trajectory.chosen_tokens, REF[:-1])
        self.assertEqual(len(trajectory.states), len(trajectory.chosen_tokens) + 1)
        self.assertEqual(len(trajectory.score_vectors), len(REF) - 1)

    def test_degenerate_mixtures(self):
        for seed in range(10):
            model = _model(seed)
            source = [BOS, 5, 6, EOS]
            mixed_one = roll_in(model, source, REF, PolicyKind.mixed(1.0), rng_seed=seed)
            reference = roll_in(model, source, REF, PolicyKind.reference(), rng_seed=seed)
            mixed_zero = roll_in(model, source, REF, PolicyKind.mixed(0.0), rng_seed=seed)
            learned = roll_in(model, source, REF, PolicyKind.learned(), rng_seed=seed)
            self.assertEqual(mixed_one.chosen_tokens, reference.chosen_tokens)
            self.assertEqual(mixed_zero.chosen_tokens, learned.chosen_tokens)

    def test_learned_with_constant_logits(self):
        trajectory = roll_in(_biased(None), [BOS, 4, EOS], REF, PolicyKind.learned(), rng_seed=0)
        self.assertEqual(trajectory.chosen_tokens, [BOS] + [EOS] * (len(REF) - 2))

    def test_replay_reproduces_states(self):
        for kind in (PolicyKind.reference(), PolicyKind.learned(), PolicyKind.mixed(0.5)):
            model = _model(4)
            source = [BOS, 6, 4, EOS]
            trajectory = roll_in(model, source, REF, kind, rng_seed=9)
            tape = Tape(grad_enabled=False)
            state = model.start(tape, source)
            self.assertEqual(state.hidden.value.tobytes(), trajectory.states[0].hidden.value.tobytes())
            for t, token in enumerate(trajectory.chosen_tokens):
                scores, state = model.decode_step(tape, state, token)
                self.assertEqual(state.hidden.value.tobytes(), trajectory.states[t + 1].hidden.value.tobytes())
                self.assertEqual(scores.value.tobytes(), trajectory.score_vectors[t].value.tobytes())

    def test_mixed_is_deterministic(self):
        model = _model(2)
        first = roll_in(model, [BOS, 4, EOS], REF, PolicyKind.mixed(0.5), rng_seed=5)
        second = roll_in(model, [BOS, 4, EOS], REF, PolicyKind.mixed(0.5), rng_seed=5)
        self.assertEqual(first.chosen_tokens, second.chosen_tokens)


class RollOutTests(SimpleTestCase):

    def test_reference_with_gold_token(self):
        model = _model(0)
        t = 1
        completion = roll_out(model, _state(model), REF[t + 1], REF[t + 2:], PolicyKind.reference(), 10, 0)
        self.assertEqual(completion, REF[t + 1:])

    def test_reference_with_wrong_token_substitutes_one_position(self):
        model = _model(0)
        completion = roll_out(model, _state(model), 7, REF[3:], PolicyKind.reference(), 10, 0)
        self.assertEqual(completion, [7] + REF[3:])
        self.assertEqual(sum(a != b for a, b in zip(completion, REF[2:])), 1)

    def test_reference_beyond_suffix_emits_eos(self):
        model = _model(0)
        self.assertEqual(roll_out(model, _state(model), 5, [], PolicyKind.reference(), 10, 0), [5, EOS])

    def test_learned_from_eos_biased_model(self):
        model = _biased(EOS)
        self.assertEqual(roll_out(model, _state(model), 6, REF[3:], PolicyKind.learned(), 10, 0), [6, EOS])

    def test_forced_eos_ends_immediately(self):
        model = _model(0)
        self.assertEqual(roll_out(model, _state(model), EOS, REF[2:], PolicyKind.learned(), 10, 0), [EOS])

    def test_length_bound_and_single_eos(self):
        for seed in range(20):
            model = _model(seed, scale=2.0)
            for kind in (PolicyKind.learned(), PolicyKind.mixed(0.5), PolicyKind.reference()):
                completion = roll_out(model, _state(model), 5, [6] * 10, kind, 4, seed)
                self.assertLessEqual(len(completion), 4 + 1)
                self.assertLessEqual(completion.count(EOS), 1)
                if EOS in completion:
                    self.assertEqual(completion[-1], EOS)

    def test_does_not_mutate_the_given_state(self):
        model = _model(3)
        state = _state(model)
        before = state.hidden.value.copy()
        roll_out(model, state, 4, [5, 6, EOS], PolicyKind.learned(), 10, 0)
        self.assertEqual(state.hidden.value.tolist(), before.tolist())
        self.assertIsInstance(state, DecoderState)
