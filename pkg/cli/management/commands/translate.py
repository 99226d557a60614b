import sys

from django.conf import settings
from django.core.management.base import BaseCommand

from cli.runner import command_errors, load_translation_assets
from corpus.io import read_lines
from corpus.vocab import decode_sentence, encode_sentence, tokenize


class Command(BaseCommand):
    help = 'Translate one sentence per line with greedy decoding'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--input', default='-', help="Input file, or '-' for stdin")
        parser.add_argument('--src-vocab')
        parser.add_argument('--tgt-vocab')
        parser.add_argument('--max-len', type=int, default=settings.SEARNN_SETTINGS['MAX_DECODE_LEN'])

    def handle(self, *args, **options):
        with command_errors():
            _, model, src_vocab, tgt_vocab = load_translation_assets(
                options['checkpoint'], options['src_vocab'], options['tgt_vocab'],
            )
            if options['input'] == '-':
                lines = [line.rstrip('\r\n') for line in sys.stdin]
            else:
                lines = read_lines(options['input'])

            for line in lines:
                if not tokenize(line):
                    self.stdout.write('')
                    continue
                output = model.greedy_decode(encode_sentence(src_vocab, line), options['max_len'])
                self.stdout.write(decode_sentence(tgt_vocab, output))
