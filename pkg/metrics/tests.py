import math
from collections import Counter

import numpy as np
from django.test import SimpleTestCase

from corpus.vocab import BOS, EOS, PAD

from .bleu import (
    MetricsError, corpus_bleu, ngram_counts, sentence_bleu, sequence_cost, smoothed_sentence_bleu,
    strip_special, trim_boundaries,
)


def brute_force_smoothed_bleu(candidate, reference):
    """Straight enumeration of every n-gram position, independent of ngram_counts."""
    if not candidate:
        return 0.0
    precisions = []
    for n in range(1, 5):
        cand_grams = [tuple(candidate[i:i + n]) for i in range(len(candidate) - n + 1)]
        ref_grams = [tuple(reference[i:i + n]) for i in range(len(reference) - n + 1)]
        remaining = list(ref_grams)
        matches = 0
        for gram in cand_grams:
            if gram in remaining:
                remaining.remove(gram)
                matches += 1
        if n == 1:
            if matches == 0:
                return 0.0
            precisions.append(matches / len(cand_grams))
        else:
            precisions.append((matches + 1) / (len(cand_grams) + 1))
    bp = 1.0 if len(candidate) >= len(reference) else math.exp(1 - len(reference) / len(candidate))
    return min(1.0, bp * math.prod(precisions) ** 0.25)


class NgramCountTests(SimpleTestCase):

    def test_examples(self):
        self.assertEqual(ngram_counts([], 1), Counter())
        self.assertEqual(ngram_counts([4, 4, 5], 1), Counter({4: 2, 5: 1}))
        self.assertEqual(ngram_counts([4, 4, 5], 2), Counter({(4, 4): 1, (4, 5): 1}))

    def test_order_out_of_range(self):
        with self.assertRaises(MetricsError):
            ngram_counts([4], 5)


class SmoothedBleuTests(SimpleTestCase):

    def test_exact_match(self):
        self.assertEqual(smoothed_sentence_bleu([4, 5, 6, 7, 8], [4, 5, 6, 7, 8]), 1.0)
        self.assertEqual(smoothed_sentence_bleu([9], [9]), 1.0)

    def test_multi_digit_ids_stay_separate(self):
        self.assertEqual(smoothed_sentence_bleu([12, 3], [1, 23]), 0.0)
        self.assertEqual(smoothed_sentence_bleu([123, 45, 6789], [123, 45, 6789]), 1.0)
        self.assertLess(smoothed_sentence_bleu([12, 34], [12, 3, 4]), 1.0)

    def test_empty_candidate(self):
        self.assertEqual(smoothed_sentence_bleu([], [4, 5]), 0.0)

    def test_hand_enumerated_value(self):
        expected = (2 / 3 * 2 / 3 * 1 / 2 * 1) ** 0.25
        value = smoothed_sentence_bleu([4, 5, 6], [4, 5, 7])
        self.assertAlmostEqual(value, expected, places=12)
        self.assertAlmostEqual(value, 0.6866, places=4)
        self.assertAlmostEqual(sequence_cost([4, 5, 6], [4, 5, 7]), 0.3134, places=4)

    def test_cost_examples(self):
        self.assertEqual(sequence_cost([4, 5], [4, 5]), 0.0)
        self.assertEqual(sequence_cost([], [4, 5]), 1.0)

    def test_matches_brute_force_on_random_sequences(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            candidate = [int(t) for t in rng.integers(4, 9, size=rng.integers(0, 12))]
            reference = [int(t) for t in rng.integers(4, 9, size=rng.integers(1, 12))]
            self.assertAlmostEqual(
                smoothed_sentence_bleu(candidate, reference),
                brute_force_smoothed_bleu(candidate, reference),
                places=12,
            )

    def test_bounded_and_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            x = [int(t) for t in rng.integers(4, 8, size=rng.integers(1, 21))]
            y = [int(t) for t in rng.integers(4, 8, size=rng.integers(0, 21))]
            cost = sequence_cost(y, x)
            self.assertTrue(0.0 <= cost <= 1.0)
            self.assertEqual(sequence_cost(x, x), 0.0)
            if x != y:
                self.assertGreater(cost, 0.0)

    def test_prefix_never_beats_full_match(self):
        reference = [4, 5, 6, 7, 8, 9, 10]
        for cut in range(len(reference) + 1):
            self.assertLessEqual(smoothed_sentence_bleu(reference[:cut], reference), 1.0)
            if cut < len(reference):
                self.assertLess(smoothed_sentence_bleu(reference[:cut], reference), 1.0)


class CorpusBleuTests(SimpleTestCase):

    def setUp(self):
        self.references = [[4, 5, 6, 7, 8], [9, 10, 11, 12], [4, 4, 5, 6, 9, 10]]

    def test_references_against_themselves(self):
        self.assertEqual(corpus_bleu(self.references, self.references), 1.0)

    def test_empty_candidates(self):
        self.assertEqual(corpus_bleu([[] for _ in self.references], self.references), 0.0)
        self.assertEqual(corpus_bleu([], []), 0.0)

    def test_single_pair_equals_sentence_bleu(self):
        candidate, reference = [4, 5, 6, 7, 9, 8], [4, 5, 6, 7, 8]
        self.assertEqual(corpus_bleu([candidate], [reference]), sentence_bleu(candidate, reference))
        self.assertGreater(sentence_bleu(candidate, reference), 0.0)

    def test_pooled_counts_differ_from_sentence_average(self):
        candidates = [[4, 5, 6, 7, 8], [9, 10, 12, 11]]
        score = corpus_bleu(candidates, self.references[:2])
        self.assertTrue(0.0 < score < 1.0)

    def test_length_mismatch(self):
        with self.assertRaises(MetricsError):
            corpus_bleu([[4]], [[4], [5]])


class StripSpecialTests(SimpleTestCase):

    def test_drops_bos_pad_and_cuts_at_eos(self):
        self.assertEqual(strip_special([BOS, 4, PAD, 5, EOS, 6, EOS]), [4, 5])
        self.assertEqual(strip_special([BOS, EOS]), [])

    def test_trim_boundaries_keeps_interior_specials(self):
        self.assertEqual(trim_boundaries([BOS, 4, PAD, 5, EOS, 6]), [4, PAD, 5])
        self.assertEqual(trim_boundaries([BOS, 4, 5, PAD]), [4, 5, PAD])
        self.assertNotEqual(sequence_cost(trim_boundaries([BOS, 4, PAD, EOS]), [4]), 0.0)
