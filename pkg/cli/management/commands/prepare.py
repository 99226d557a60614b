from collections import Counter
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand

from cli.runner import SRC_VOCAB_FILE, TGT_VOCAB_FILE, command_errors
from corpus.batching import encode_pairs
from corpus.io import read_parallel, save_cache
from corpus.vocab import build_vocab

CACHE_FILE = 'corpus.cache'
HISTOGRAM_WIDTH = 5


class Command(BaseCommand):
    help = 'Build source/target vocabularies and a binary token-id cache from a parallel corpus'

    def add_arguments(self, parser):
        parser.add_argument('--src', required=True, help='Source-side text file')
        parser.add_argument('--tgt', required=True, help='Target-side text file')
        parser.add_argument('--out', required=True, help='Output directory')
        parser.add_argument('--vocab-size', type=int, default=settings.SEARNN_SETTINGS['VOCAB_SIZE'])
        parser.add_argument('--min-freq', type=int, default=settings.SEARNN_SETTINGS['MIN_FREQ'])

    def handle(self, *args, **options):
        with command_errors():
            # Validate everything before the first write.
            lines = read_parallel(options['src'], options['tgt'])
            src_vocab = build_vocab([s for s, _ in lines], options['vocab_size'], options['min_freq'])
            tgt_vocab = build_vocab([t for _, t in lines], options['vocab_size'], options['min_freq'])
            pairs = encode_pairs(lines, src_vocab, tgt_vocab)

            out_dir = Path(options['out'])
            out_dir.mkdir(parents=True, exist_ok=True)
            src_vocab.save(out_dir / SRC_VOCAB_FILE)
            tgt_vocab.save(out_dir / TGT_VOCAB_FILE)
            save_cache(pairs, out_dir / CACHE_FILE)

        self.stdout.write(f"Pairs: {len(pairs)}")
        self.stdout.write(f"Source vocabulary: {len(src_vocab)} tokens")
        self.stdout.write(f"Target vocabulary: {len(tgt_vocab)} tokens")
        for side, lengths in (('Source', [len(p.source) - 2 for p in pairs]),
                              ('Target', [len(p.target) - 2 for p in pairs])):
            self.stdout.write(f"{side} length histogram:")
            histogram = Counter(length // HISTOGRAM_WIDTH for length in lengths)
            for bucket in sorted(histogram):
                low = bucket * HISTOGRAM_WIDTH
                self.stdout.write(f"  {low:>4}-{low + HISTOGRAM_WIDTH - 1:<4} {histogram[bucket]}")
        self.stdout.write(self.style.SUCCESS(f"Prepared corpus written to {out_dir}"))
