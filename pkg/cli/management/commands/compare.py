import json

from django.core.management.base import BaseCommand

from cli.runner import command_errors, read_config_file, resolve_run_config, run_training, write_resolved
from trainer.compare import compare_objectives

COMPARISON_FILE = 'comparison.json'


class Command(BaseCommand):
    help = 'Train MLE and SEARNN on the same data for several seeds and compare test BLEU'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True)
        parser.add_argument('--seeds', type=int, nargs='+', default=[1, 2, 3])
        parser.add_argument('--threads', type=int)
        parser.add_argument('--set', dest='overrides', action='append', default=[],
                            metavar='SECTION.KEY=VALUE')

    def handle(self, *args, **options):
        with command_errors():
            overrides = list(options['overrides'])
            if options['threads'] is not None:
                overrides.append(f"train.threads={options['threads']}")
            config = resolve_run_config(read_config_file(options['config']), overrides)
            output_dir = config.output_dir

            def run(objective, seed):
                run_dir = output_dir / f"{objective}-seed{seed}"
                write_resolved(config, run_dir, {
                    'train.objective': objective,
                    'seed': seed,
                    'output_dir': str(run_dir),
                })
                return run_training(config, run_dir, objective=objective, seed=seed)

            report = compare_objectives(run, options['seeds'])
            output_dir.mkdir(parents=True, exist_ok=True)
            (output_dir / COMPARISON_FILE).write_text(
                json.dumps(report.to_dict(), indent=2, sort_keys=True) + '\n', encoding='utf-8',
            )

        for objective, summary in report.summaries.items():
            self.stdout.write(
                f"{objective:<7} mean test BLEU {summary.mean_test_bleu:.4f}  "
                f"mean wall-clock {summary.mean_wall_clock:.1f}s"
            )
        self.stdout.write(f"Relative improvement: {report.relative_improvement:+.2%}")
        self.stdout.write(self.style.SUCCESS(f"Comparison written to {output_dir / COMPARISON_FILE}"))
