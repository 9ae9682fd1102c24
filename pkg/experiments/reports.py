"""Report files: report.jsonl (config header, records, checks), summary.txt and CSV dumps.

The JSONL body depends only on the resolved config and the seed, so two runs
with the same inputs write byte-identical reports whatever the thread count.
"""
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)

REPORT_NAME = 'report.jsonl'
SUMMARY_NAME = 'summary.txt'


class ReportError(OSError):
    """The output directory cannot be created or written."""


@dataclass(frozen=True)
class WrittenReport:
    directory: Path
    checksum: str
    files: tuple


def _line(record):
    return json.dumps(record, sort_keys=True, allow_nan=True)


def report_lines(resolved_config, result):
    lines = [_line({'kind': 'config', **resolved_config})]
    lines.extend(_line(record) for record in result.records)
    lines.extend(_line(check.to_record(result.experiment)) for check in result.checks)
    return lines


def checksum(lines):
    digest = hashlib.sha256()
    for line in lines:
        digest.update(line.encode('utf-8'))
        digest.update(b'\n')
    return digest.hexdigest()


def _format(value):
    if value is None:
        return '-'
    if isinstance(value, float):
        return f'{value:.6g}'
    return str(value)


def summary_text(result, digest):
    rows = [('member', 'mean', 'stderr', 'ci95', 'n_paths')]
    for record in result.records:
        if 'mean' not in record or 'member' not in record:
            continue
        ci = record.get('ci95')
        rows.append((
            record['member'], _format(record['mean']), _format(record.get('stderr')),
            f'[{_format(ci[0])}, {_format(ci[1])}]' if ci else '-', _format(record.get('n_paths')),
        ))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = [f'experiment: {result.experiment}', '']
    if len(rows) > 1:
        for row in rows:
            lines.append('  '.join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip())
        lines.append('')
    for check in result.checks:
        detail = f' ({check.detail})' if check.detail else ''
        lines.append(f'{"PASS" if check.passed else "FAIL"}  {check.name}{detail}')
    passed = sum(check.passed for check in result.checks)
    lines.extend(['', f'{passed}/{len(result.checks)} checks passed', f'sha256: {digest}', ''])
    return '\n'.join(lines)


def write_report(directory, resolved_config, result, write_csv=True):
    directory = Path(directory)
    lines = report_lines(resolved_config, result)
    digest = checksum(lines)
    written = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        report_path = directory / REPORT_NAME
        report_path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
        written.append(report_path)
        summary_path = directory / SUMMARY_NAME
        summary_path.write_text(summary_text(result, digest), encoding='utf-8')
        written.append(summary_path)
        if write_csv:
            for name, dump in result.csv_dumps:
                dump(directory / name)
                written.append(directory / name)
    except OSError as exc:
        raise ReportError(f'cannot write reports to {directory}: {exc.strerror or exc}') from exc

    logger.info('wrote %s (sha256 %s)', directory / REPORT_NAME, digest)
    return WrittenReport(directory, digest, tuple(written))
