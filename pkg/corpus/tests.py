import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from .batching import SentencePair, collate, encode_pairs, make_batches
from .io import CorpusError, load_cache, read_parallel, save_cache
from .sample_data import make_reversal_corpus, write_corpus
from .vocab import (
    BOS, EOS, PAD, SPECIAL_TOKENS, UNK, Vocabulary, build_vocab, decode_sentence, encode_sentence,
)


def _pair(src_len, tgt_len=3, offset=4):
    return SentencePair(
        source=[BOS] + [offset + i for i in range(src_len)] + [EOS],
        target=[BOS] + [offset + i for i in range(tgt_len)] + [EOS],
    )


class BuildVocabTests(SimpleTestCase):

    def test_empty_corpus_yields_specials_only(self):
        vocab = build_vocab([], 1000, 1)
        self.assertEqual(vocab.id_to_token, SPECIAL_TOKENS)

    def test_frequency_then_first_occurrence_order(self):
        vocab = build_vocab(["a b a", "b c"], 1000, 1)
        self.assertEqual(vocab.id_to_token[4:], ['a', 'b', 'c'])
        self.assertEqual(vocab.token_to_id, {t: i for i, t in enumerate(vocab.id_to_token)})

    def test_min_freq_filters_rare_tokens(self):
        vocab = build_vocab(["a b a", "b c"], 1000, 2)
        self.assertEqual(vocab.id_to_token[4:], ['a', 'b'])

    def test_max_size_counts_the_specials(self):
        vocab = build_vocab(["a b a", "b c"], 5, 1)
        self.assertEqual(len(vocab), 5)
        self.assertEqual(vocab.id_to_token[4], 'a')

    def test_invalid_arguments(self):
        with self.assertRaises(CorpusError):
            build_vocab(["a"], 3, 1)
        with self.assertRaises(CorpusError):
            build_vocab(["a"], 10, 0)

    def test_duplicate_tokens_are_rejected(self):
        with self.assertRaises(CorpusError):
            Vocabulary(id_to_token=SPECIAL_TOKENS + ['x', 'x'])


class EncodeSentenceTests(SimpleTestCase):

    def setUp(self):
        self.vocab = Vocabulary(id_to_token=SPECIAL_TOKENS + ['a', 'b'])

    def test_empty_line(self):
        self.assertEqual(encode_sentence(self.vocab, ""), [BOS, EOS])

    def test_known_tokens(self):
        self.assertEqual(encode_sentence(self.vocab, "a b"), [1, 4, 5, 2])

    def test_unknown_token_maps_to_unk(self):
        self.assertEqual(encode_sentence(self.vocab, "a zzz"), [1, 4, UNK, 2])

    def test_literal_special_strings_map_to_unk(self):
        vocab = build_vocab(["a <eos> b <pad> <bos>"], 100, 1)
        self.assertEqual(encode_sentence(vocab, "a <eos> b"), [BOS, 4, UNK, 5, EOS])
        self.assertEqual(encode_sentence(vocab, "<bos> <pad> <unk>"), [BOS, UNK, UNK, UNK, EOS])

    def test_round_trip_normalizes_whitespace(self):
        ids = encode_sentence(self.vocab, "  a   b\ta ")
        self.assertEqual(decode_sentence(self.vocab, ids), "a b a")

    def test_decode_stops_at_first_eos(self):
        self.assertEqual(decode_sentence(self.vocab, [BOS, 4, PAD, EOS, 5]), "a")


class VocabularyFileTests(SimpleTestCase):

    def test_save_load_preserves_ids_and_hash(self):
        vocab = build_vocab(["x y z x", "é y"], 100, 1)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'src.vocab'
            vocab.save(path)
            lines = path.read_text(encoding='utf-8').splitlines()
            self.assertEqual(lines[:4], ['<pad>', '<bos>', '<eos>', '<unk>'])
            loaded = Vocabulary.load(path)
        self.assertEqual(loaded.id_to_token, vocab.id_to_token)
        self.assertEqual(loaded.content_hash(), vocab.content_hash())

    def test_hash_depends_on_token_order(self):
        first = Vocabulary(id_to_token=SPECIAL_TOKENS + ['a', 'b'])
        second = Vocabulary(id_to_token=SPECIAL_TOKENS + ['b', 'a'])
        self.assertNotEqual(first.content_hash(), second.content_hash())

    def test_missing_file(self):
        with self.assertRaises(CorpusError):
            Vocabulary.load('/nonexistent/vocab')


class MakeBatchesTests(SimpleTestCase):

    def test_single_pair(self):
        batches = make_batches([_pair(3)], batch_size=4, seed=0)
        self.assertEqual(len(batches), 1)
        self.assertEqual(len(batches[0]), 1)

    def test_five_pairs_batch_size_two(self):
        pairs = [_pair(n) for n in (2, 3, 5, 9, 10)]
        batches = make_batches(pairs, batch_size=2, seed=7)
        self.assertEqual(sorted(len(b) for b in batches), [1, 2, 2])

    def test_same_seed_same_batches(self):
        pairs = [_pair(n % 11 + 1, n % 5 + 1) for n in range(40)]
        first = make_batches(pairs, batch_size=3, seed=11)
        second = make_batches(pairs, batch_size=3, seed=11)
        self.assertEqual(len(first), len(second))
        for a, b in zip(first, second):
            self.assertEqual(a.source_matrix.tolist(), b.source_matrix.tolist())
            self.assertEqual(a.target_matrix.tolist(), b.target_matrix.tolist())

    def test_every_pair_appears_exactly_once(self):
        pairs = [_pair(n % 13 + 1, n % 7 + 1, offset=4 + n) for n in range(57)]
        batches = make_batches(pairs, batch_size=5, seed=3)
        seen = sorted((tuple(p.source), tuple(p.target)) for b in batches for p in b.rows())
        expected = sorted((tuple(p.source), tuple(p.target)) for p in pairs)
        self.assertEqual(seen, expected)

    def test_padding_beyond_lengths(self):
        batch = collate([_pair(1), _pair(6, 2)])
        for row in range(len(batch)):
            self.assertTrue((batch.source_matrix[row, batch.source_lengths[row]:] == PAD).all())
            self.assertTrue((batch.target_matrix[row, batch.target_lengths[row]:] == PAD).all())
        self.assertEqual(batch.source_matrix.shape, (2, 8))

    def test_invalid_batch_size(self):
        with self.assertRaises(CorpusError):
            make_batches([_pair(2)], batch_size=0, seed=0)


class CorpusFileTests(SimpleTestCase):

    def test_misaligned_files_name_both_counts(self):
        with tempfile.TemporaryDirectory() as tmp:
            src, tgt = Path(tmp) / 'a.src', Path(tmp) / 'a.tgt'
            src.write_text('x\n' * 10, encoding='utf-8')
            tgt.write_text('y\n' * 9, encoding='utf-8')
            with self.assertRaises(CorpusError) as ctx:
                read_parallel(src, tgt)
        message = str(ctx.exception)
        self.assertIn('10', message)
        self.assertIn('9', message)
        self.assertIn('a.src', message)
        self.assertIn('a.tgt', message)

    def test_cache_round_trip_and_truncation(self):
        vocab = build_vocab(["a b c", "c d"], 100, 1)
        pairs = encode_pairs([("a b c", "c d"), ("d", "a zz"), ("", "")], vocab, vocab)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'corpus.cache'
            save_cache(pairs, path)
            self.assertEqual(load_cache(path), pairs)
            blob = path.read_bytes()
            path.write_bytes(blob[:-3])
            with self.assertRaises(CorpusError):
                load_cache(path)
            path.write_bytes(b'XXXX' + blob[4:])
            with self.assertRaises(CorpusError):
                load_cache(path)


class ReversalCorpusTests(SimpleTestCase):

    def test_targets_are_reversed_sources(self):
        splits = make_reversal_corpus(vocab_size=20, min_len=5, max_len=12,
                                      sizes={'train': 50, 'dev': 10}, seed=4)
        self.assertEqual({k: len(v) for k, v in splits.items()}, {'train': 50, 'dev': 10})
        for source, target in splits['train']:
            words = source.split()
            self.assertTrue(5 <= len(words) <= 12)
            self.assertEqual(target.split(), list(reversed(words)))
            self.assertTrue(all(w.startswith('w') and 0 <= int(w[1:]) < 20 for w in words))

    def test_deterministic_and_written_aligned(self):
        first = make_reversal_corpus(sizes={'train': 20}, seed=9)
        second = make_reversal_corpus(sizes={'train': 20}, seed=9)
        self.assertEqual(first, second)
        with tempfile.TemporaryDirectory() as tmp:
            written = write_corpus(first, tmp)
            src_path, tgt_path = written['train']
            self.assertEqual(read_parallel(src_path, tgt_path), first['train'])
