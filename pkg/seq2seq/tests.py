import numpy as np
from django.test import SimpleTestCase

from corpus.vocab import BOS, EOS, PAD
from numeric_core.gradcheck import finite_difference_check
from numeric_core.params import ParamStore
from numeric_core.tape import Tape
from searnn.losses import mle_loss

from .model import DecoderState, EncoderOutput, ModelDims, ModelError, Seq2SeqModel, masked_argmax

DIMS = ModelDims(src_vocab=7, tgt_vocab=10, embed=4, hidden=3)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def np_gru(p, prefix, x, h):
    z = _sigmoid(p[f"{prefix}.W_z"] @ x + p[f"{prefix}.U_z"] @ h + p[f"{prefix}.b_z"])
    r = _sigmoid(p[f"{prefix}.W_r"] @ x + p[f"{prefix}.U_r"] @ h + p[f"{prefix}.b_r"])
    cand = np.tanh(p[f"{prefix}.W_h"] @ x + p[f"{prefix}.U_h"] @ (r * h) + p[f"{prefix}.b_h"])
    return (1 - z) * h + z * cand


def np_encode(p, source, hidden):
    embedded = [p['src_embed'][t] for t in source]
    forward = np.zeros(hidden)
    for x in embedded:
        forward = np_gru(p, 'enc_fwd', x, forward)
    backward = np.zeros(hidden)
    for x in reversed(embedded):
        backward = np_gru(p, 'enc_bwd', x, backward)
    return np.tanh(p['init.W'] @ np.concatenate([forward, backward]) + p['init.b'])


def np_decode_step(p, h, token):
    h = np_gru(p, 'dec', p['tgt_embed'][token], h)
    return p['out.W'] @ h + p['out.b'], h


def _model(seed, dims=DIMS, scale=0.5):
    return Seq2SeqModel.initialize(dims, scale=scale, seed=seed)


def _zeroed(dims=DIMS):
    model = _model(0, dims)
    for name in model.params.names():
        model.params.set(name, np.zeros(model.params[name].shape))
    return model


class EncoderTests(SimpleTestCase):

    def test_zero_params_single_token(self):
        model = _zeroed()
        out = model.encode(Tape(grad_enabled=False), [5])
        self.assertEqual(out.context.value.tolist(), [0.0, 0.0, 0.0])
        self.assertEqual(out.per_position_states.shape, (1, 2 * DIMS.hidden))

    def test_empty_source(self):
        with self.assertRaises(ModelError):
            _model(0).encode(Tape(grad_enabled=False), [])

    def test_matches_straight_line_encoder(self):
        for seed in range(10):
            model = _model(seed)
            source = [int(t) for t in np.random.default_rng(seed).integers(0, DIMS.src_vocab, size=5)]
            context = model.encode(Tape(grad_enabled=False), source).context.value
            np.testing.assert_allclose(context, np_encode(model.params.params, source, DIMS.hidden), atol=1e-13)

    def test_reversal_swaps_directions(self):
        model = _model(3)
        hidden = DIMS.hidden
        swapped = ParamStore()
        for name in model.params.names():
            value = model.params[name]
            if name.startswith('enc_fwd.'):
                swapped.add(name, model.params['enc_bwd.' + name.split('.', 1)[1]])
            elif name.startswith('enc_bwd.'):
                swapped.add(name, model.params['enc_fwd.' + name.split('.', 1)[1]])
            elif name == 'init.W':
                swapped.add(name, np.concatenate([value[:, hidden:], value[:, :hidden]], axis=1))
            else:
                swapped.add(name, value)
        mirrored = Seq2SeqModel(DIMS, swapped)
        source = [1, 4, 6, 5, 2]
        original = model.encode(Tape(grad_enabled=False), source).context.value
        reversed_ = mirrored.encode(Tape(grad_enabled=False), source[::-1]).context.value
        np.testing.assert_allclose(original, reversed_, atol=1e-14)

    def test_rejects_mismatched_parameters(self):
        params = ParamStore.initialize(ModelDims(7, 10, embed=4, hidden=2).param_shapes(), 0.1, 0)
        with self.assertRaises(ModelError):
            Seq2SeqModel(DIMS, params)


class DecoderTests(SimpleTestCase):

    def test_init_decoder_is_identity(self):
        tape = Tape(grad_enabled=False)
        context = tape.constant([0.1, -0.2, 0.3])
        state = _model(0).init_decoder(EncoderOutput(context=context))
        self.assertIs(state.hidden, context)

    def test_zero_params(self):
        model = _zeroed()
        tape = Tape(grad_enabled=False)
        h = np.array([1.0, -2.0, 4.0])
        scores, state = model.decode_step(tape, DecoderState(tape.constant(h)), 5)
        self.assertEqual(scores.value.tolist(), [0.0] * DIMS.tgt_vocab)
        self.assertEqual(state.hidden.value.tolist(), (0.5 * h).tolist())

    def test_pure_and_matches_straight_line(self):
        model = _model(8)
        h = np.random.default_rng(8).normal(size=DIMS.hidden)
        results = []
        for _ in range(2):
            tape = Tape(grad_enabled=False)
            scores, state = model.decode_step(tape, DecoderState(tape.constant(h)), 6)
            results.append((scores.value.tobytes(), state.hidden.value.tobytes()))
        self.assertEqual(results[0], results[1])
        expected_scores, expected_h = np_decode_step(model.params.params, h, 6)
        np.testing.assert_allclose(np.frombuffer(results[0][0]), expected_scores, atol=1e-13)
        np.testing.assert_allclose(np.frombuffer(results[0][1]), expected_h, atol=1e-13)

    def test_token_out_of_range(self):
        model = _model(0)
        tape = Tape(grad_enabled=False)
        with self.assertRaises(ModelError):
            model.decode_step(tape, DecoderState(tape.constant(np.zeros(3))), DIMS.tgt_vocab)


class GreedyDecodeTests(SimpleTestCase):

    def test_eos_biased_model_stops_immediately(self):
        model = _zeroed()
        bias = np.zeros(DIMS.tgt_vocab)
        bias[EOS] = 5.0
        model.params.set('out.b', bias)
        self.assertEqual(model.greedy_decode([4, 5], max_len=10), [BOS, EOS])

    def test_length_cap(self):
        model = _zeroed()
        bias = np.zeros(DIMS.tgt_vocab)
        bias[7] = 5.0
        model.params.set('out.b', bias)
        self.assertEqual(model.greedy_decode([4], max_len=3), [BOS, 7, 7, 7])

    def test_tie_goes_to_lowest_id(self):
        scores = np.zeros(10)
        scores[7] = scores[9] = 1.0
        self.assertEqual(masked_argmax(scores), 7)

    def test_constant_logits_choose_eos(self):
        self.assertEqual(masked_argmax(np.full(10, 0.3)), EOS)

    def test_pad_and_bos_never_emitted(self):
        model = _zeroed()
        bias = np.zeros(DIMS.tgt_vocab)
        bias[PAD] = bias[BOS] = 1e300
        bias[6] = 1.0
        model.params.set('out.b', bias)
        self.assertEqual(model.greedy_decode([4], max_len=2), [BOS, 6, 6])

    def test_random_models_emit_well_formed_output(self):
        for seed in range(10):
            tokens = _model(seed, scale=1.0).greedy_decode([4, 5, 6], max_len=8)
            self.assertEqual(tokens[0], BOS)
            self.assertNotIn(PAD, tokens)
            self.assertNotIn(BOS, tokens[1:])
            self.assertLessEqual(tokens.count(EOS), 1)
            if EOS in tokens:
                self.assertEqual(tokens[-1], EOS)

    def test_invalid_max_len(self):
        with self.assertRaises(ModelError):
            _model(0).greedy_decode([4], max_len=0)


class EndToEndGradientTests(SimpleTestCase):

    def test_mle_loss_of_two_sentence_batch(self):
        for seed in range(5):
            model = _model(seed)
            batch = [([BOS, 4, 5, EOS], [BOS, 6, 7, 8, EOS]), ([BOS, 6, EOS], [BOS, 9, EOS])]

            def fn(tape, model=model):
                return tape.mean([mle_loss(model, src, tgt, tape=tape) for src, tgt in batch])

            report = finite_difference_check(fn, model.params)
            self.assertTrue(report.passed, report.failing())
