from django.db import models


class ExperimentRun(models.Model):
    STATUS_CHOICES = [
        ('running', 'Running'),
        ('passed', 'Passed'),
        ('failed', 'Checks failed'),
        ('invalid', 'Invalid config'),
        ('aborted', 'Numerical abort'),
    ]

    experiment = models.CharField(max_length=40)
    seed = models.CharField(max_length=20)
    config = models.JSONField(default=dict)
    config_path = models.CharField(max_length=255, blank=True)
    output_dir = models.CharField(max_length=255, blank=True)
    checksum = models.CharField(max_length=64, blank=True)
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default='running')
    exit_code = models.IntegerField(null=True, blank=True)
    message = models.TextField(blank=True)
    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-started_at']
        indexes = [
            models.Index(fields=['experiment', 'status'], name='exprun_experiment_status_idx'),
            models.Index(fields=['started_at'], name='exprun_started_at_idx'),
        ]

    def __str__(self):
        return f"{self.experiment} (seed {self.seed}) - {self.status}"

    def as_dict(self, with_records=False):
        data = {
            'id': self.pk,
            'experiment': self.experiment,
            'seed': int(self.seed),
            'status': self.status,
            'exit_code': self.exit_code,
            'checksum': self.checksum,
            'output_dir': self.output_dir,
            'started_at': self.started_at.isoformat() if self.started_at else None,
            'finished_at': self.finished_at.isoformat() if self.finished_at else None,
        }
        if with_records:
            data['config'] = self.config
            data['message'] = self.message
            data['records'] = [record.as_dict() for record in self.records.all()]
        return data


class ReportRecord(models.Model):
    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name='records')
    position = models.PositiveIntegerField()
    member = models.CharField(max_length=120)
    mean = models.FloatField(null=True, blank=True)
    stderr = models.FloatField(null=True, blank=True)
    ci_low = models.FloatField(null=True, blank=True)
    ci_high = models.FloatField(null=True, blank=True)
    n_paths = models.PositiveIntegerField(null=True, blank=True)
    flags = models.JSONField(default=dict, blank=True)
    payload = models.JSONField(default=dict)

    class Meta:
        ordering = ['run', 'position']
        constraints = [
            models.UniqueConstraint(fields=['run', 'position'], name='unique_record_position'),
        ]

    def __str__(self):
        return f"{self.run.experiment} #{self.position}: {self.member}"

    @classmethod
    def from_payload(cls, run, position, payload):
        ci = payload.get('ci95') or [None, None]
        return cls(
            run=run,
            position=position,
            member=str(payload.get('member', payload.get('kind', '')))[:120],
            mean=payload.get('mean'),
            stderr=payload.get('stderr'),
            ci_low=ci[0],
            ci_high=ci[1],
            n_paths=payload.get('n_paths'),
            flags=payload.get('flags', {}),
            payload=payload,
        )

    def as_dict(self):
        return self.payload
