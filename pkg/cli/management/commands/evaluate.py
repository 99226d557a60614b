from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand

from cli.runner import command_errors, load_translation_assets
from corpus.batching import encode_pairs
from corpus.io import CorpusError, read_parallel
from trainer.engine import METRICS_FILE, MetricsLog, RunMetrics, evaluate_bleu, mean_mle_loss


class Command(BaseCommand):
    help = 'Greedy-decode a test set with a checkpoint and report corpus BLEU'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--src', required=True)
        parser.add_argument('--tgt', required=True)
        parser.add_argument('--src-vocab', help='Source vocabulary (default: the one recorded in the checkpoint)')
        parser.add_argument('--tgt-vocab', help='Target vocabulary (default: the one recorded in the checkpoint)')
        parser.add_argument('--metrics', help=f"Metrics log to append to (default: {METRICS_FILE} next to the checkpoint)")
        parser.add_argument('--max-len', type=int, default=settings.SEARNN_SETTINGS['MAX_DECODE_LEN'])

    def handle(self, *args, **options):
        with command_errors():
            checkpoint, model, src_vocab, tgt_vocab = load_translation_assets(
                options['checkpoint'], options['src_vocab'], options['tgt_vocab'],
            )
            lines = read_parallel(options['src'], options['tgt'])
            if not lines:
                raise CorpusError(f"Test file {options['src']} is empty")
            pairs = encode_pairs(lines, src_vocab, tgt_vocab)

            bleu = evaluate_bleu(lambda source: model.greedy_decode(source, options['max_len']), pairs)
            record = RunMetrics(
                step=int(checkpoint.hyperparameters.get('step', 0)),
                split='test',
                loss=mean_mle_loss(model, pairs),
                bleu=bleu,
                lr=float(checkpoint.hyperparameters.get('lr', 0.0)),
            )
            metrics_path = options['metrics'] or Path(options['checkpoint']).resolve().parent / METRICS_FILE
            MetricsLog(metrics_path).append(record)

        self.stdout.write(f"BLEU: {bleu:.4f}")
