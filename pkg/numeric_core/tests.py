import math

import numpy as np
from django.test import SimpleTestCase

from .gradcheck import finite_difference_check, relative_error
from .gru import gru_shapes, gru_step
from .params import ParamStore
from .tape import BACKWARD_RULES, NonFiniteError, NumericError, ShapeError, Tape, backward, corrupted_rules


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _gru_straight_line(p, x, h):
    z = _sigmoid(p['g.W_z'] @ x + p['g.U_z'] @ h + p['g.b_z'])
    r = _sigmoid(p['g.W_r'] @ x + p['g.U_r'] @ h + p['g.b_r'])
    cand = np.tanh(p['g.W_h'] @ x + p['g.U_h'] @ (r * h) + p['g.b_h'])
    return (1 - z) * h + z * cand


def _gru_store(seed, input_size=3, hidden_size=3, scale=0.5):
    return ParamStore.initialize(gru_shapes('g', input_size, hidden_size), scale=scale, seed=seed)


class PrimitiveTests(SimpleTestCase):

    def setUp(self):
        self.tape = Tape(grad_enabled=False)

    def test_sigmoid_at_zero(self):
        self.assertEqual(self.tape.sigmoid(np.zeros(3)).value.tolist(), [0.5, 0.5, 0.5])

    def test_sigmoid_is_finite_for_large_inputs(self):
        value = self.tape.sigmoid(np.array([-1000.0, 1000.0])).value
        self.assertEqual(value.tolist(), [0.0, 1.0])

    def test_log_softmax_uniform_row(self):
        for width in (1, 4, 25):
            value = self.tape.log_softmax(np.full(width, 3.7)).value
            np.testing.assert_allclose(value, -math.log(width), rtol=0, atol=1e-12)

    def test_log_softmax_rows_normalize(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            rows = rng.normal(scale=10.0, size=(4, 9))
            value = self.tape.log_softmax(rows).value
            np.testing.assert_allclose(np.exp(value).sum(axis=-1), 1.0, atol=1e-9)

    def test_matmul_example(self):
        value = self.tape.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]])).value
        self.assertEqual(value.tolist(), [[3.0], [7.0]])

    def test_concat_and_row_select(self):
        self.assertEqual(self.tape.concat([np.array([1.0]), np.array([2.0, 3.0])]).value.tolist(), [1.0, 2.0, 3.0])
        table = np.arange(6.0).reshape(3, 2)
        self.assertEqual(self.tape.row_select(table, 2).value.tolist(), [4.0, 5.0])
        self.assertEqual(self.tape.row_select(table, np.array([0, 0])).value.tolist(), [[0.0, 1.0], [0.0, 1.0]])

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            self.tape.matmul(np.ones((2, 3)), np.ones(2))
        with self.assertRaises(ShapeError):
            self.tape.add(np.ones(2), np.ones(3))
        with self.assertRaises(ShapeError):
            self.tape.row_select(np.ones((2, 2)), 2)

    def test_non_finite_output(self):
        with self.assertRaises(NonFiniteError):
            self.tape.mul(np.array([np.inf]), np.array([1.0]))


class BackwardTests(SimpleTestCase):

    def _store(self, value):
        store = ParamStore()
        store.add('p', value)
        return store

    def test_sum_gives_ones(self):
        store = self._store(np.arange(6.0).reshape(2, 3))
        tape = Tape()
        tape.backward(tape.sum(tape.param(store, 'p')))
        self.assertEqual(store.grads['p'].tolist(), np.ones((2, 3)).tolist())

    def test_square_gives_two_p(self):
        value = np.array([1.5, -2.0, 0.25])
        store = self._store(value)
        tape = Tape()
        p = tape.param(store, 'p')
        tape.backward(tape.sum(tape.mul(p, p)))
        self.assertEqual(store.grads['p'].tolist(), (2 * value).tolist())

    def test_gradients_accumulate_across_calls(self):
        store = self._store(np.ones(2))
        for _ in range(2):
            tape = Tape()
            tape.backward(tape.sum(tape.param(store, 'p')))
        self.assertEqual(store.grads['p'].tolist(), [2.0, 2.0])

    def test_non_parameter_leaves_are_ignored(self):
        store = self._store(np.ones(2))
        tape = Tape()
        loss = tape.sum(tape.mul(tape.param(store, 'p'), tape.constant([3.0, 4.0])))
        contributed = tape.backward(loss)
        self.assertEqual(set(contributed), {'p'})
        self.assertEqual(store.grads['p'].tolist(), [3.0, 4.0])

    def test_loss_must_be_scalar(self):
        store = self._store(np.ones(2))
        tape = Tape()
        with self.assertRaises(ShapeError):
            tape.backward(tape.tanh(tape.param(store, 'p')))

    def test_disabled_tape_refuses_backward(self):
        store = self._store(np.ones(2))
        tape = Tape(grad_enabled=False)
        with self.assertRaises(NumericError):
            tape.backward(tape.sum(tape.param(store, 'p')))

    def test_inference_tape_is_bit_identical(self):
        store = _gru_store(3)
        rng = np.random.default_rng(3)
        x, h = rng.normal(size=3), rng.normal(size=3)
        with_grad = Tape()
        without_grad = Tape(grad_enabled=False)
        a = gru_step(with_grad, store, 'g', with_grad.constant(x), with_grad.constant(h))
        b = gru_step(without_grad, store, 'g', without_grad.constant(x), without_grad.constant(h))
        self.assertEqual(a.value.tobytes(), b.value.tobytes())
        self.assertEqual(without_grad.nodes, [])


class GruStepTests(SimpleTestCase):

    def test_zero_parameters_halve_the_state(self):
        store = ParamStore()
        for name, shape in gru_shapes('g', 2, 3).items():
            store.add(name, np.zeros(shape))
        tape = Tape(grad_enabled=False)
        h = np.array([0.4, -1.0, 2.0])
        out = gru_step(tape, store, 'g', tape.constant([1.0, -3.0]), tape.constant(h))
        self.assertEqual(out.value.tolist(), (0.5 * h).tolist())

    def test_zero_state_zero_bias(self):
        # with W_z also zero the update gate sits at exactly 0.5
        store = _gru_store(5, input_size=2)
        for gate in ('z', 'r', 'h'):
            store.set(f"g.b_{gate}", np.zeros(3))
        store.set('g.W_z', np.zeros((3, 2)))
        x = np.array([0.3, -0.8])
        tape = Tape(grad_enabled=False)
        out = gru_step(tape, store, 'g', tape.constant(x), tape.constant(np.zeros(3)))
        np.testing.assert_allclose(out.value, 0.5 * np.tanh(store['g.W_h'] @ x), atol=1e-15)

    def test_matches_straight_line_formulas(self):
        for seed in range(20):
            store = _gru_store(seed)
            rng = np.random.default_rng(100 + seed)
            x, h = rng.normal(size=3), rng.normal(size=3)
            tape = Tape(grad_enabled=False)
            out = gru_step(tape, store, 'g', tape.constant(x), tape.constant(h))
            np.testing.assert_allclose(out.value, _gru_straight_line(store.params, x, h), atol=1e-14)

    def test_shape_mismatch(self):
        store = _gru_store(0)
        tape = Tape(grad_enabled=False)
        with self.assertRaises(ShapeError):
            gru_step(tape, store, 'g', tape.constant(np.ones(4)), tape.constant(np.ones(3)))


class FiniteDifferenceTests(SimpleTestCase):

    def test_quadratic_is_exact(self):
        store = ParamStore()
        store.add('w', np.array([0.5, -1.25, 2.0]))
        target = np.array([1.0, 2.0, -3.0])

        def fn(tape):
            diff = tape.sub(tape.param(store, 'w'), tape.constant(target))
            return tape.sum(tape.mul(diff, diff))

        report = finite_difference_check(fn, store, eps=1e-5)
        self.assertLess(report.max_error, 1e-8)

    def test_gru_step_over_seeds(self):
        for seed in range(20):
            store = _gru_store(seed)
            rng = np.random.default_rng(seed)
            store.add('x', rng.normal(size=3))
            store.add('h', rng.normal(size=3))
            weights = rng.normal(size=3)

            def fn(tape, store=store, weights=weights):
                out = gru_step(tape, store, 'g', tape.param(store, 'x'), tape.param(store, 'h'))
                return tape.sum(tape.mul(out, tape.constant(weights)))

            report = finite_difference_check(fn, store)
            self.assertTrue(report.passed, report.failing())
            self.assertEqual(set(report.errors), set(store.names()))

    def test_corrupted_rule_is_detected(self):
        store = ParamStore()
        store.add('a', np.array([0.3, -0.7, 1.1]))

        def fn(tape):
            return tape.sum(tape.tanh(tape.param(store, 'a')))

        self.assertTrue(finite_difference_check(fn, store).passed)
        report = finite_difference_check(fn, store, rules=corrupted_rules('tanh'))
        self.assertFalse(report.passed)
        self.assertGreater(report.max_error, 1e-2)

    def test_non_deterministic_function(self):
        store = ParamStore()
        store.add('a', np.ones(2))
        calls = []

        def fn(tape):
            calls.append(1)
            return tape.sum(tape.scale(tape.param(store, 'a'), float(len(calls))))

        with self.assertRaises(NumericError):
            finite_difference_check(fn, store)

    def test_eps_range(self):
        store = ParamStore()
        store.add('a', np.ones(1))
        with self.assertRaises(NumericError):
            finite_difference_check(lambda tape: tape.sum(tape.param(store, 'a')), store, eps=1e-3)

    def test_relative_error_floor(self):
        self.assertEqual(relative_error(0.0, 0.0), 0.0)
        self.assertAlmostEqual(relative_error(1.0, 1.1), 0.1 / 1.1)

    def test_relative_error_is_per_entry(self):
        self.assertAlmostEqual(relative_error([100.0, 2e-3], [100.0, 1e-3]), 0.5)
        self.assertEqual(relative_error([3.0, 0.0], [3.0, 0.0]), 0.0)

    def test_wrong_small_entry_next_to_large_one_fails(self):
        store = ParamStore()
        store.add('a', np.array([0.4, -0.9]))
        weights = np.array([100.0, 1e-3])
        rules = dict(BACKWARD_RULES)

        def doubled_second_entry(node, g):
            return tuple(grad * np.array([1.0, 2.0]) for grad in BACKWARD_RULES['mul'](node, g))

        rules['mul'] = doubled_second_entry

        def fn(tape):
            return tape.sum(tape.mul(tape.param(store, 'a'), tape.constant(weights)))

        self.assertTrue(finite_difference_check(fn, store).passed)
        report = finite_difference_check(fn, store, rules=rules)
        self.assertFalse(report.passed)
        self.assertAlmostEqual(report.errors['a'], 0.5, places=6)

    def test_backward_wrapper_matches_tape(self):
        store = ParamStore()
        store.add('p', np.array([1.5, -2.0]))
        tape = Tape()
        p = tape.param(store, 'p')
        contributed = backward(tape, tape.sum(tape.mul(p, p)))
        np.testing.assert_array_equal(contributed['p'], np.array([3.0, -4.0]))
        np.testing.assert_array_equal(store.grads['p'], np.array([3.0, -4.0]))

    def test_unknown_primitive(self):
        with self.assertRaises(NumericError):
            corrupted_rules('softplus')


class ParamStoreTests(SimpleTestCase):

    def test_initialize_is_seeded_and_bounded(self):
        shapes = {'b': (3,), 'a': (2, 2)}
        first = ParamStore.initialize(shapes, scale=0.08, seed=1)
        second = ParamStore.initialize(shapes, scale=0.08, seed=1)
        for name in shapes:
            self.assertEqual(first[name].tobytes(), second[name].tobytes())
            self.assertTrue(np.all(np.abs(first[name]) <= 0.08))
        first.check_consistent()
        self.assertEqual(first.num_parameters(), 7)

    def test_snapshot_is_independent(self):
        store = ParamStore.initialize({'a': (2,)}, scale=1.0, seed=0)
        copy = store.snapshot()
        store.set('a', [5.0, 6.0])
        self.assertNotEqual(copy['a'].tolist(), [5.0, 6.0])

    def test_set_checks_shape(self):
        store = ParamStore.initialize({'a': (2,)}, scale=1.0, seed=0)
        with self.assertRaises(ShapeError):
            store.set('a', [1.0, 2.0, 3.0])
