import hashlib
import json
import os
import tempfile

from django.test import SimpleTestCase

from experiments.reports import REPORT_NAME, SUMMARY_NAME, ReportError, checksum, report_lines, write_report
from experiments.runners import ExperimentResult


def sample_result():
    result = ExperimentResult('demo')
    result.record(member='policy a', mean=0.25, stderr=0.01, ci95=[0.23, 0.27], n_paths=100)
    result.record(kind='gap', difference=0.5)
    result.check('mean is small', True, 'mean 0.25')
    result.check('gap is large', False)
    return result


class ReportTestCase(SimpleTestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)
        self.config = {'schema_version': 1, 'experiment': 'demo', 'mc': {'n_paths': 100, 'master_seed': 1}}

    def test_lines(self):
        lines = report_lines(self.config, sample_result())
        self.assertEqual(len(lines), 1 + 2 + 2)
        header = json.loads(lines[0])
        self.assertEqual(header['kind'], 'config')
        self.assertEqual(header['mc']['master_seed'], 1)
        check = json.loads(lines[-1])
        self.assertEqual((check['kind'], check['passed']), ('check', False))

    def test_lines_are_sorted_json(self):
        for line in report_lines(self.config, sample_result()):
            self.assertEqual(line, json.dumps(json.loads(line), sort_keys=True))

    def test_written_checksum_matches_body(self):
        written = write_report(self.directory.name, self.config, sample_result())
        with open(os.path.join(self.directory.name, REPORT_NAME), 'rb') as handle:
            body = handle.read()
        self.assertEqual(written.checksum, hashlib.sha256(body).hexdigest())
        self.assertEqual(written.checksum, checksum(report_lines(self.config, sample_result())))

    def test_same_inputs_same_bytes(self):
        first = write_report(os.path.join(self.directory.name, 'a'), self.config, sample_result())
        second = write_report(os.path.join(self.directory.name, 'b'), self.config, sample_result())
        self.assertEqual(first.checksum, second.checksum)

    def test_summary(self):
        written = write_report(self.directory.name, self.config, sample_result())
        with open(os.path.join(self.directory.name, SUMMARY_NAME)) as handle:
            summary = handle.read()
        self.assertIn('PASS  mean is small (mean 0.25)', summary)
        self.assertIn('FAIL  gap is large', summary)
        self.assertIn('1/2 checks passed', summary)
        self.assertIn(written.checksum, summary)
        self.assertIn('policy a', summary)

    def test_csv_dumps(self):
        result = sample_result()

        def dump(path):
            with open(path, 'w') as handle:
                handle.write('x\n1\n')

        result.csv_dumps.append(('values.csv', dump))
        written = write_report(self.directory.name, self.config, result)
        self.assertTrue(os.path.exists(os.path.join(self.directory.name, 'values.csv')))
        self.assertEqual(len(written.files), 3)
        write_report(os.path.join(self.directory.name, 'nocsv'), self.config, result, write_csv=False)
        self.assertFalse(os.path.exists(os.path.join(self.directory.name, 'nocsv', 'values.csv')))

    def test_unwritable_directory(self):
        blocker = os.path.join(self.directory.name, 'blocker')
        with open(blocker, 'w') as handle:
            handle.write('')
        with self.assertRaises(ReportError):
            write_report(os.path.join(blocker, 'out'), self.config, sample_result())

    def test_result_passed(self):
        result = sample_result()
        self.assertFalse(result.passed)
        self.assertEqual(result.records[0]['experiment'], 'demo')
