"""Config path -> validated ExperimentConfig, shared by the management commands."""
import logging
from dataclasses import dataclass

from .config import ConfigError, apply_overrides, flatten, load_toml, merge_defaults, shipped_config_path
from .forms import ExperimentConfigForm

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoadedConfig:
    path: str
    config: object
    resolved: dict


def resolve_config_path(config_path=None, experiment=None):
    if config_path:
        return str(config_path)
    if experiment:
        return str(shipped_config_path(experiment))
    raise ConfigError(['give --config PATH or --experiment NAME'])


def load_experiment_config(config_path=None, experiment=None, seed=None, out=None):
    """Parse, merge defaults, apply overrides and validate; raises ConfigError listing every problem."""
    path = resolve_config_path(config_path, experiment)
    raw = load_toml(path)
    resolved, problems = merge_defaults(raw)
    if experiment:
        resolved['experiment'] = experiment
    resolved = apply_overrides(resolved, seed=seed, out=out)

    form = ExperimentConfigForm(data=flatten(resolved))
    problems.extend(form.diagnostics() if not form.is_valid() else [])
    if problems:
        logger.info('%s: %d config problem(s)', path, len(problems))
        raise ConfigError([f'{path}: {problem}' for problem in problems])
    config = form.to_config()
    return LoadedConfig(path, config, config.resolved())
