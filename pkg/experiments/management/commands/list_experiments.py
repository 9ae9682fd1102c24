from django.core.management.base import BaseCommand

from experiments.registry import EXPERIMENTS


class Command(BaseCommand):
    help = 'List the available experiments and their shipped configs'

    def handle(self, *args, **options):
        width = max(len(name) for name in EXPERIMENTS)
        for spec in EXPERIMENTS.values():
            self.stdout.write(f'{spec.name.ljust(width)}  {spec.description}')
            self.stdout.write(f'{"".ljust(width)}  config: {spec.default_config}')
