from django.core.management.base import BaseCommand

from cli.runner import command_errors
from corpus.sample_data import REVERSAL_TASK, make_reversal_corpus, write_corpus


class Command(BaseCommand):
    help = 'Write the synthetic sequence-reversal corpus (train/dev/test .src/.tgt files)'

    def add_arguments(self, parser):
        parser.add_argument('--out', required=True, help='Output directory')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--vocab-size', type=int, default=REVERSAL_TASK['vocab_size'])
        parser.add_argument('--min-len', type=int, default=REVERSAL_TASK['min_len'])
        parser.add_argument('--max-len', type=int, default=REVERSAL_TASK['max_len'])
        parser.add_argument(
            '--sizes', type=int, nargs=3, metavar=('TRAIN', 'DEV', 'TEST'),
            default=[REVERSAL_TASK['sizes'][split] for split in ('train', 'dev', 'test')],
        )

    def handle(self, *args, **options):
        with command_errors():
            splits = make_reversal_corpus(
                vocab_size=options['vocab_size'],
                min_len=options['min_len'],
                max_len=options['max_len'],
                sizes=dict(zip(('train', 'dev', 'test'), options['sizes'])),
                seed=options['seed'],
            )
            written = write_corpus(splits, options['out'])

        for split, (src_path, tgt_path) in written.items():
            self.stdout.write(f"{split}: {len(splits[split])} pairs -> {src_path}, {tgt_path}")
