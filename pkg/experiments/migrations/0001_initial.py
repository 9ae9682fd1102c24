import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('experiment', models.CharField(max_length=40)),
                ('seed', models.CharField(max_length=20)),
                ('config', models.JSONField(default=dict)),
                ('config_path', models.CharField(blank=True, max_length=255)),
                ('output_dir', models.CharField(blank=True, max_length=255)),
                ('checksum', models.CharField(blank=True, max_length=64)),
                ('status', models.CharField(choices=[('running', 'Running'), ('passed', 'Passed'), ('failed', 'Checks failed'), ('invalid', 'Invalid config'), ('aborted', 'Numerical abort')], default='running', max_length=10)),
                ('exit_code', models.IntegerField(blank=True, null=True)),
                ('message', models.TextField(blank=True)),
                ('started_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-started_at'],
                'indexes': [models.Index(fields=['experiment', 'status'], name='exprun_experiment_status_idx'), models.Index(fields=['started_at'], name='exprun_started_at_idx')],
            },
        ),
        migrations.CreateModel(
            name='ReportRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('position', models.PositiveIntegerField()),
                ('member', models.CharField(max_length=120)),
                ('mean', models.FloatField(blank=True, null=True)),
                ('stderr', models.FloatField(blank=True, null=True)),
                ('ci_low', models.FloatField(blank=True, null=True)),
                ('ci_high', models.FloatField(blank=True, null=True)),
                ('n_paths', models.PositiveIntegerField(blank=True, null=True)),
                ('flags', models.JSONField(blank=True, default=dict)),
                ('payload', models.JSONField(default=dict)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='records', to='experiments.experimentrun')),
            ],
            options={
                'ordering': ['run', 'position'],
                'constraints': [models.UniqueConstraint(fields=('run', 'position'), name='unique_record_position')],
            },
        ),
    ]
