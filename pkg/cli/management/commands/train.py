from django.core.management.base import BaseCommand

from cli.runner import command_errors, read_config_file, resolve_run_config, run_training, write_resolved
from trainer.engine import OBJECTIVES


class Command(BaseCommand):
    help = 'Train a model with the MLE or SEARNN objective from a JSON run config'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='JSON run configuration')
        parser.add_argument('--objective', choices=OBJECTIVES, help='Override train.objective')
        parser.add_argument('--threads', type=int, help='Cap on roll-out worker threads')
        parser.add_argument(
            '--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
            help='Override one config value (JSON-decoded); may be repeated',
        )

    def handle(self, *args, **options):
        with command_errors():
            overrides = list(options['overrides'])
            if options['objective']:
                overrides.append(f"train.objective={options['objective']}")
            if options['threads'] is not None:
                overrides.append(f"train.threads={options['threads']}")
            config = resolve_run_config(read_config_file(options['config']), overrides)

            run_dir = config.output_dir
            write_resolved(config, run_dir)
            result = run_training(config, run_dir)

        self.stdout.write(f"Steps: {result.steps}")
        self.stdout.write(f"Best dev BLEU: {result.best_dev_bleu:.4f}")
        self.stdout.write(f"Test BLEU: {result.test_bleu:.4f}")
        self.stdout.write(self.style.SUCCESS(f"Run written to {run_dir}"))
