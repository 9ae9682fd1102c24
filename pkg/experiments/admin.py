from django.contrib import admin
from .models import ExperimentRun, ReportRecord


class ReportRecordInline(admin.TabularInline):
    model = ReportRecord
    fields = ['position', 'member', 'mean', 'stderr', 'ci_low', 'ci_high', 'n_paths']
    readonly_fields = fields
    extra = 0
    can_delete = False


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ['id', 'experiment', 'seed', 'status', 'exit_code', 'started_at', 'finished_at']
    list_filter = ['experiment', 'status', 'started_at']
    search_fields = ['experiment', 'checksum', 'config_path']
    readonly_fields = ['started_at', 'finished_at', 'checksum']
    inlines = [ReportRecordInline]

    fieldsets = (
        ('Run', {
            'fields': ('experiment', 'seed', 'status', 'exit_code', 'message')
        }),
        ('Provenance', {
            'fields': ('config_path', 'config', 'output_dir', 'checksum')
        }),
        ('Timestamps', {
            'fields': ('started_at', 'finished_at'),
            'classes': ('collapse',)
        }),
    )


@admin.register(ReportRecord)
class ReportRecordAdmin(admin.ModelAdmin):
    list_display = ['run', 'position', 'member', 'mean', 'stderr', 'n_paths']
    list_filter = ['run__experiment']
    search_fields = ['member', 'run__experiment']
