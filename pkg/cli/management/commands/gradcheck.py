from django.core.management.base import BaseCommand, CommandError

from cli.checks import DIMS, LAYERS, run_gradcheck_suite
from cli.runner import EXIT_NUMERIC, command_errors
from numeric_core.tape import BACKWARD_RULES, corrupted_rules


class Command(BaseCommand):
    help = 'Check analytic gradients of every primitive and layer against finite differences'

    def add_arguments(self, parser):
        parser.add_argument('--dims', choices=sorted(DIMS), default='small')
        parser.add_argument('--seeds', type=int, default=20, help='Number of random seeds per layer')
        parser.add_argument('--layer', dest='layers', action='append', choices=list(LAYERS),
                            help='Restrict to one layer; may be repeated')
        parser.add_argument('--eps', type=float, default=1e-5)
        parser.add_argument('--tol', type=float, default=1e-4)
        parser.add_argument('--corrupt', choices=sorted(BACKWARD_RULES),
                            help='Negative control: perturb this primitive\'s backward rule')

    def handle(self, *args, **options):
        with command_errors():
            rules = corrupted_rules(options['corrupt']) if options['corrupt'] else None
            reports = run_gradcheck_suite(
                seeds=range(options['seeds']),
                dims=options['dims'],
                layers=options['layers'],
                rules=rules,
                eps=options['eps'],
                tol=options['tol'],
            )

        failed = []
        for layer, report in reports.items():
            status = 'PASS' if report.passed else 'FAIL'
            self.stdout.write(f"{layer:<12} {status}  max rel err {report.max_error:.3e}")
            for name in sorted(report.errors):
                self.stdout.write(f"    {name:<16} {report.errors[name]:.3e}")
            if not report.passed:
                failed.append(layer)

        if failed:
            raise CommandError(f"Gradient check failed for: {', '.join(failed)}", returncode=EXIT_NUMERIC)
        self.stdout.write(self.style.SUCCESS(f"All {len(reports)} layers passed ({options['seeds']} seeds)"))
