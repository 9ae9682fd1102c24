from django.http import JsonResponse
from django.shortcuts import get_object_or_404
from django.views.decorators.http import require_GET

from .models import ExperimentRun
from .registry import EXPERIMENTS


@require_GET
def run_list(request):
    """Recent runs, newest first; ?experiment= and ?status= filter them"""
    runs = ExperimentRun.objects.all()
    experiment = request.GET.get('experiment', '')
    status = request.GET.get('status', '')
    if experiment:
        runs = runs.filter(experiment=experiment)
    if status:
        runs = runs.filter(status=status)

    data = [run.as_dict() for run in runs[:50]]
    return JsonResponse({'runs': data})


@require_GET
def run_detail(request, pk):
    run = get_object_or_404(ExperimentRun, pk=pk)
    return JsonResponse(run.as_dict(with_records=True))


@require_GET
def experiment_list(request):
    data = [
        {'name': spec.name, 'description': spec.description, 'config': spec.default_config}
        for spec in EXPERIMENTS.values()
    ]
    return JsonResponse({'experiments': data})
