from dataclasses import dataclass
from typing import Callable

from . import runners
from .config import EXPERIMENT_CHOICES, shipped_config_path


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    description: str
    runner: Callable

    @property
    def default_config(self):
        return str(shipped_config_path(self.name))


_RUNNERS = {
    'tsirelson-gap': runners.tsirelson_gap,
    'uniformity': runners.uniformity,
    'recursion-check': runners.recursion_check,
    'girsanov-check': runners.girsanov_check,
    'qv-recovery': runners.qv_recovery,
    'hjb-benchmark': runners.hjb_benchmark,
    'equivalence-triangle': runners.equivalence_triangle,
}

EXPERIMENTS = {
    name: ExperimentSpec(name, description, _RUNNERS[name])
    for name, description in EXPERIMENT_CHOICES
}


def get_experiment(name):
    try:
        return EXPERIMENTS[name]
    except KeyError:
        raise KeyError(f'unknown experiment {name!r}; choose from {", ".join(EXPERIMENTS)}')
