import json
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from django.utils import timezone

from simulation.exceptions import CflViolation, NumericalAbort, SimulationError
from simulation.paths import MAX_SEED

from experiments.config import ConfigError
from experiments.loading import load_experiment_config
from experiments.models import ExperimentRun, ReportRecord
from experiments.registry import get_experiment
from experiments.reports import ReportError, report_lines, write_report

logger = logging.getLogger('experiments')


def seed_type(value):
    seed = int(value)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(value)
    return seed


class Command(BaseCommand):
    help = 'Run one experiment and write report.jsonl, summary.txt and CSV dumps'

    def add_arguments(self, parser):
        parser.add_argument('--config', help='TOML experiment config')
        parser.add_argument('--experiment', help='Experiment name; without --config the shipped config is used')
        parser.add_argument('--seed', type=seed_type, help='Master seed (unsigned 64-bit), overrides the config')
        parser.add_argument('--threads', type=int, default=None, help='Worker cap for Monte Carlo batches')
        parser.add_argument('--out', help='Output directory, overrides the config')
        parser.add_argument('--strict', action='store_true', help='Exit 1 when an acceptance check fails')

    def handle(self, *args, **options):
        threads = settings.LAB_THREADS if options['threads'] is None else options['threads']
        if threads < 1:
            raise CommandError(f'--threads must be at least 1, got {threads}', returncode=2)

        try:
            loaded = load_experiment_config(options['config'], options['experiment'],
                                            seed=options['seed'], out=options['out'])
        except ConfigError as exc:
            raise CommandError('invalid config:\n  ' + '\n  '.join(exc.diagnostics), returncode=2)

        cfg = loaded.config
        out_dir = Path(cfg.output_dir) if cfg.output_dir else Path(settings.LAB_REPORT_DIR) / cfg.experiment
        run = self._start_run(loaded, out_dir)
        logger.info('running %s (seed %d, %d thread(s)) from %s', cfg.experiment, cfg.master_seed, threads,
                    loaded.path)

        try:
            result = get_experiment(cfg.experiment).runner(cfg, threads)
        except CflViolation as exc:
            self._finish_run(run, 'invalid', 2, str(exc))
            raise CommandError(str(exc), returncode=2)
        except NumericalAbort as exc:
            logger.error('%s aborted: %s', cfg.experiment, exc)
            self._finish_run(run, 'aborted', 3, str(exc))
            raise CommandError(f'numerical abort: {exc}', returncode=3)
        except SimulationError as exc:
            logger.exception('%s failed inside the simulation core', cfg.experiment)
            self._finish_run(run, 'aborted', 3, str(exc))
            raise CommandError(f'simulation error: {exc}', returncode=3)

        try:
            written = write_report(out_dir, loaded.resolved, result, write_csv=cfg.write_csv)
        except ReportError as exc:
            self._finish_run(run, 'invalid', 2, str(exc))
            raise CommandError(str(exc), returncode=2)

        failed = [check.name for check in result.checks if not check.passed]
        status = 'failed' if failed else 'passed'
        exit_code = 1 if failed and options['strict'] else 0
        self._finish_run(run, status, exit_code, '; '.join(failed), written.checksum, result, loaded)

        self.stdout.write((written.directory / 'summary.txt').read_text(encoding='utf-8'))
        if failed:
            self.stdout.write(self.style.WARNING(f'{len(failed)} check(s) failed'))
            if options['strict']:
                raise CommandError(f'{len(failed)} acceptance check(s) failed', returncode=1)
        else:
            self.stdout.write(self.style.SUCCESS(f'All checks passed; reports in {written.directory}'))

    def _start_run(self, loaded, out_dir):
        if not settings.LAB_RECORD_RUNS:
            return None
        return ExperimentRun.objects.create(
            experiment=loaded.config.experiment,
            seed=str(loaded.config.master_seed),
            config=loaded.resolved,
            config_path=loaded.path,
            output_dir=str(out_dir),
        )

    def _finish_run(self, run, status, exit_code, message='', checksum='', result=None, loaded=None):
        if run is None:
            return
        run.status = status
        run.exit_code = exit_code
        run.message = message
        run.checksum = checksum
        run.finished_at = timezone.now()
        run.save()
        if result is not None:
            payloads = [json.loads(line) for line in report_lines(loaded.resolved, result)[1:]]
            ReportRecord.objects.bulk_create(
                ReportRecord.from_payload(run, position, payload) for position, payload in enumerate(payloads)
            )
