import json
import os
import tempfile
from io import StringIO
from unittest import mock

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase, override_settings

from simulation.exceptions import LookaheadError, NumericalAbort

from experiments.models import ExperimentRun
from experiments.registry import EXPERIMENTS, ExperimentSpec
from experiments.runners import ExperimentResult

SMALL_GAP_CONFIG = """
schema_version = 1
experiment = "tsirelson-gap"

[grid]
T = 1.0
K = 6
r = 0.5
m = 4

[mc]
n_paths = 200
master_seed = 11
chunk_size = 64

[output]
csv = false
"""


class CommandTestCase(TestCase):
    def setUp(self):
        """Temporary directory holding configs and reports"""
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)
        self.config = self.write(SMALL_GAP_CONFIG)

    def write(self, text, name='config.toml'):
        path = os.path.join(self.directory.name, name)
        with open(path, 'w') as handle:
            handle.write(text)
        return path

    def out(self, name):
        return os.path.join(self.directory.name, name)

    def run_command(self, *args, **options):
        stdout, stderr = StringIO(), StringIO()
        call_command(*args, stdout=stdout, stderr=stderr, **options)
        return stdout.getvalue()

    def read_report(self, directory):
        with open(os.path.join(directory, 'report.jsonl')) as handle:
            return [json.loads(line) for line in handle]


class ListAndValidateTestCase(CommandTestCase):
    def test_list_experiments(self):
        output = self.run_command('list_experiments')
        for name in EXPERIMENTS:
            self.assertIn(name, output)

    def test_validate_shipped_config(self):
        output = self.run_command('validate_experiment', experiment='hjb-benchmark')
        self.assertIn('config is valid', output)

    def test_validate_lists_violations(self):
        path = self.write('schema_version = 1\n[grid]\nK = 1\n[relaxation]\nepsilon = 0.0\n', 'bad.toml')
        stderr = StringIO()
        with self.assertRaises(CommandError) as ctx:
            call_command('validate_experiment', config=path, stderr=stderr)
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('K must be at least 2', stderr.getvalue())
        self.assertIn('degenerate under discretization', stderr.getvalue())

    def test_validate_parse_error(self):
        path = self.write('schema_version = 1\n[grid\n', 'broken.toml')
        stderr = StringIO()
        with self.assertRaises(CommandError):
            call_command('validate_experiment', config=path, stderr=stderr)
        self.assertIn('line 2', stderr.getvalue())

    def test_validate_cfl_suggests_n_t(self):
        path = self.write('schema_version = 1\nexperiment = "hjb-benchmark"\n[hjb]\nn_t = 50\n', 'cfl.toml')
        stderr = StringIO()
        with self.assertRaises(CommandError) as ctx:
            call_command('validate_experiment', config=path, stderr=stderr)
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('use n_t >=', stderr.getvalue())

    def test_validate_lists_cfl_alongside_other_problems(self):
        path = self.write('schema_version = 1\nexperiment = "hjb-benchmark"\n[grid]\nK = 1\n[hjb]\nn_t = 50\n',
                          'both.toml')
        stderr = StringIO()
        with self.assertRaises(CommandError) as ctx:
            call_command('validate_experiment', config=path, stderr=stderr)
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('K must be at least 2', stderr.getvalue())
        self.assertIn('use n_t >=', stderr.getvalue())


class RunExperimentTestCase(CommandTestCase):
    def test_run_writes_reports(self):
        out = self.out('gap')
        output = self.run_command('run_experiment', config=self.config, out=out)
        self.assertTrue(os.path.exists(os.path.join(out, 'summary.txt')))
        self.assertIn('sha256', output)

        records = self.read_report(out)
        self.assertEqual(records[0]['kind'], 'config')
        self.assertEqual(records[0]['grid']['K'], 6)
        closed = next(r for r in records if r.get('member') == 'tsirelson-mu')
        self.assertEqual(closed['mean'], 1.0)
        envelope = next(r for r in records if r.get('bound') == 'family-lower-bound')
        self.assertLess(envelope['mean'], closed['mean'])

    def test_run_is_recorded(self):
        self.run_command('run_experiment', config=self.config, out=self.out('gap'))
        run = ExperimentRun.objects.get()
        self.assertEqual(run.experiment, 'tsirelson-gap')
        self.assertEqual(run.seed, '11')
        self.assertIn(run.status, ('passed', 'failed'))
        self.assertEqual(run.exit_code, 0)
        self.assertEqual(len(run.checksum), 64)
        self.assertEqual(run.records.count(), len(self.read_report(self.out('gap'))) - 1)

    @override_settings(LAB_RECORD_RUNS=False)
    def test_recording_can_be_disabled(self):
        self.run_command('run_experiment', config=self.config, out=self.out('gap'))
        self.assertFalse(ExperimentRun.objects.exists())

    def test_thread_count_does_not_change_report(self):
        self.run_command('run_experiment', config=self.config, out=self.out('one'), threads=1)
        self.run_command('run_experiment', config=self.config, out=self.out('four'), threads=4)
        with open(os.path.join(self.out('one'), 'report.jsonl'), 'rb') as one, \
                open(os.path.join(self.out('four'), 'report.jsonl'), 'rb') as four:
            self.assertEqual(one.read(), four.read())

    def test_seed_override(self):
        self.run_command('run_experiment', config=self.config, out=self.out('seeded'), seed=2 ** 64 - 1)
        header = self.read_report(self.out('seeded'))[0]
        self.assertEqual(header['mc']['master_seed'], 2 ** 64 - 1)

    def test_invalid_config_exits_2(self):
        path = self.write('schema_version = 1\n[grid]\nK = 1\n', 'bad.toml')
        with self.assertRaises(CommandError) as ctx:
            self.run_command('run_experiment', config=path, out=self.out('bad'))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('K must be at least 2', str(ctx.exception))
        self.assertFalse(os.path.exists(self.out('bad')))

    def test_unwritable_output_exits_2(self):
        blocker = self.write('', 'blocker')
        with self.assertRaises(CommandError) as ctx:
            self.run_command('run_experiment', config=self.config, out=os.path.join(blocker, 'out'))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertEqual(ExperimentRun.objects.get().status, 'invalid')

    def test_zero_threads_exits_2(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_command('run_experiment', config=self.config, out=self.out('zero'), threads=0)
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('--threads must be at least 1', str(ctx.exception))

    def test_simulation_error_exits_3(self):
        def peek(cfg, threads):
            raise LookaheadError('quotient up to t=0.5 after the view time 0.25')

        spec = ExperimentSpec('tsirelson-gap', 'peeking', peek)
        with mock.patch('experiments.management.commands.run_experiment.get_experiment', return_value=spec):
            with self.assertLogs('experiments', level='ERROR'):
                with self.assertRaises(CommandError) as ctx:
                    self.run_command('run_experiment', config=self.config, out=self.out('peek'))
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertEqual(ExperimentRun.objects.get().status, 'aborted')

    def test_numerical_abort_exits_3(self):
        def explode(cfg, threads):
            raise NumericalAbort('drift is not finite', step=4, path=17)

        spec = ExperimentSpec('tsirelson-gap', 'exploding', explode)
        with mock.patch('experiments.management.commands.run_experiment.get_experiment', return_value=spec):
            with self.assertLogs('experiments', level='ERROR'):
                with self.assertRaises(CommandError) as ctx:
                    self.run_command('run_experiment', config=self.config, out=self.out('abort'))
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertIn('path 17', str(ctx.exception))
        run = ExperimentRun.objects.get()
        self.assertEqual((run.status, run.exit_code), ('aborted', 3))

    def test_strict_exits_1_on_failed_check(self):
        def failing(cfg, threads):
            result = ExperimentResult('tsirelson-gap')
            result.check('always fails', False)
            return result

        spec = ExperimentSpec('tsirelson-gap', 'failing', failing)
        with mock.patch('experiments.management.commands.run_experiment.get_experiment', return_value=spec):
            output = self.run_command('run_experiment', config=self.config, out=self.out('lenient'))
            self.assertIn('FAIL  always fails', output)
            with self.assertRaises(CommandError) as ctx:
                self.run_command('run_experiment', config=self.config, out=self.out('strict'), strict=True)
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertEqual(ExperimentRun.objects.filter(status='failed').count(), 2)
