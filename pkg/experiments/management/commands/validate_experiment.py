from django.core.management.base import BaseCommand, CommandError

from experiments.config import ConfigError
from experiments.loading import load_experiment_config


class Command(BaseCommand):
    help = 'Check an experiment config without running it; lists every violation'

    def add_arguments(self, parser):
        parser.add_argument('--config', help='TOML experiment config')
        parser.add_argument('--experiment', help='Validate the shipped config of this experiment')

    def handle(self, *args, **options):
        try:
            loaded = load_experiment_config(options['config'], options['experiment'])
        except ConfigError as exc:
            for diagnostic in exc.diagnostics:
                self.stderr.write(diagnostic)
            raise CommandError(f'{len(exc.diagnostics)} problem(s) found', returncode=2)

        self.stdout.write(self.style.SUCCESS(f'{loaded.path}: {loaded.config.experiment} config is valid'))
