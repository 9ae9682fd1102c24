"""Experiment config files: TOML with a schema version and fixed sections.

A file is parsed, merged over DEFAULTS, flattened into form data for
:class:`experiments.forms.ExperimentConfigForm` and, once valid, turned into an
:class:`ExperimentConfig`. The resolved config (without process knobs such as
the thread count or the output directory) is embedded in every report.
"""
import copy
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, fields
from pathlib import Path

from simulation.hjb import Boundary, HjbGrid
from simulation.paths import make_tsirelson_grid, make_uniform_grid
from simulation.tsirelson import RelaxedPayoffConfig

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

EXPERIMENT_CHOICES = [
    ('tsirelson-gap', 'Closed-loop value vs open-loop probe envelope'),
    ('uniformity', 'KS test of the fractional increments'),
    ('recursion-check', 'Level recursion and consistency on closed-loop paths'),
    ('girsanov-check', 'Reweighted vs direct values and projection refinement'),
    ('qv-recovery', 'Brownian recovery round trip and quadratic variation'),
    ('hjb-benchmark', 'HJB solver against closed-form values'),
    ('equivalence-triangle', 'HJB value, feedback MC value and open-loop envelope'),
]
EXPERIMENT_NAMES = [name for name, _ in EXPERIMENT_CHOICES]

# (section, key) -> form field
FIELD_MAP = {
    ('grid', 'T'): 'horizon',
    ('grid', 'K'): 'levels',
    ('grid', 'r'): 'ratio',
    ('grid', 'm'): 'substeps',
    ('mc', 'n_paths'): 'n_paths',
    ('mc', 'master_seed'): 'master_seed',
    ('mc', 'chunk_size'): 'chunk_size',
    ('relaxation', 'epsilon'): 'epsilon',
    ('relaxation', 'window'): 'window',
    ('hjb', 'x_lo'): 'x_lo',
    ('hjb', 'x_hi'): 'x_hi',
    ('hjb', 'n_x'): 'n_x',
    ('hjb', 'n_t'): 'n_t',
    ('hjb', 'action_resolution'): 'action_resolution',
    ('hjb', 'boundary'): 'boundary',
    ('hjb', 'mc_steps'): 'mc_steps',
    ('girsanov', 'n_paths'): 'girsanov_paths',
    ('girsanov', 'n_steps'): 'girsanov_steps',
    ('girsanov', 'log_weight_cap'): 'log_weight_cap',
    ('girsanov', 'projection_paths'): 'projection_paths',
    ('girsanov', 'projection_strides'): 'projection_strides',
    ('checks', 'uniformity_levels'): 'uniformity_levels',
    ('checks', 'recursion_paths'): 'recursion_paths',
    ('checks', 'recursion_depth'): 'recursion_depth',
    ('checks', 'recovery_paths'): 'recovery_paths',
    ('checks', 'qv_window'): 'qv_window',
    ('checks', 'qv_steps'): 'qv_steps',
    ('output', 'dir'): 'output_dir',
    ('output', 'csv'): 'write_csv',
    ('output', 'csv_time_stride'): 'csv_time_stride',
    ('output', 'csv_space_stride'): 'csv_space_stride',
}
# Sections that describe where a run writes, not what it computes
PROCESS_SECTIONS = ('output',)
LIST_FIELDS = ('projection_strides', 'uniformity_levels')

DEFAULTS = {
    'schema_version': SCHEMA_VERSION,
    'experiment': 'tsirelson-gap',
    'grid': {'T': 1.0, 'K': 20, 'r': 0.5, 'm': 4},
    'mc': {'n_paths': 10000, 'master_seed': 20240601, 'chunk_size': 1024},
    # epsilon and window default to T * 1e-3 and the smallest Euler step
    'relaxation': {},
    'hjb': {
        'x_lo': -7.0, 'x_hi': 7.0, 'n_x': 701, 'n_t': 3000,
        'action_resolution': 21, 'boundary': 'dirichlet', 'mc_steps': 200,
    },
    'girsanov': {
        'n_paths': 100000, 'n_steps': 50, 'log_weight_cap': 30.0,
        'projection_paths': 2000, 'projection_strides': [32, 16, 8],
    },
    'checks': {
        'uniformity_levels': [-1, -5, -10], 'recursion_paths': 100, 'recursion_depth': 10,
        'recovery_paths': 100, 'qv_window': 200, 'qv_steps': 2000,
    },
    'output': {'dir': '', 'csv': True, 'csv_time_stride': 100, 'csv_space_stride': 5},
}


class ConfigError(ValueError):
    """A config file that cannot be read or parsed; ``diagnostics`` lists every problem."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__('; '.join(self.diagnostics))


def load_toml(path):
    path = Path(path)
    try:
        with open(path, 'rb') as handle:
            return tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigError([f'{path}: no such config file'])
    except OSError as exc:
        raise ConfigError([f'{path}: {exc.strerror}'])
    except tomllib.TOMLDecodeError as exc:
        # the message carries "(at line L, column C)"
        raise ConfigError([f'{path}: parse error: {exc}'])


def merge_defaults(raw):
    """Deep-merge ``raw`` over DEFAULTS; returns (resolved, unknown-key diagnostics)."""
    resolved = copy.deepcopy(DEFAULTS)
    problems = []
    for key, value in raw.items():
        if key not in resolved:
            problems.append(f'unknown top-level key {key!r}')
        elif isinstance(resolved[key], dict):
            if not isinstance(value, dict):
                problems.append(f'[{key}] must be a table')
                continue
            for inner, inner_value in value.items():
                if (key, inner) not in FIELD_MAP:
                    problems.append(f'unknown key {inner!r} in [{key}]')
                else:
                    resolved[key][inner] = inner_value
        else:
            resolved[key] = value
    return resolved, problems


def flatten(resolved):
    """Form data from a resolved config; list values become comma-separated strings."""
    data = {
        'schema_version': resolved.get('schema_version'),
        'experiment': resolved.get('experiment'),
    }
    for (section, key), name in FIELD_MAP.items():
        value = resolved.get(section, {}).get(key)
        if value is None:
            continue
        if name in LIST_FIELDS:
            value = ','.join(str(v) for v in value) if isinstance(value, (list, tuple)) else value
        data[name] = value
    return data


def apply_overrides(resolved, seed=None, out=None):
    resolved = copy.deepcopy(resolved)
    if seed is not None:
        resolved['mc']['master_seed'] = seed
    if out is not None:
        resolved['output']['dir'] = str(out)
    return resolved


def shipped_config_path(experiment):
    return Path(__file__).resolve().parent.parent / 'configs' / f'{experiment}.toml'


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    schema_version: int
    horizon: float
    levels: int
    ratio: float
    substeps: int
    n_paths: int
    master_seed: int
    chunk_size: int
    epsilon: float
    window: float
    x_lo: float
    x_hi: float
    n_x: int
    n_t: int
    action_resolution: int
    boundary: str
    mc_steps: int
    girsanov_paths: int
    girsanov_steps: int
    log_weight_cap: float
    projection_paths: int
    projection_strides: tuple
    uniformity_levels: tuple
    recursion_paths: int
    recursion_depth: int
    recovery_paths: int
    qv_window: int
    qv_steps: int
    output_dir: str
    write_csv: bool
    csv_time_stride: int
    csv_space_stride: int

    @classmethod
    def from_cleaned(cls, cleaned):
        return cls(**{f.name: cleaned[f.name] for f in fields(cls)})

    def tsirelson_grid(self):
        return make_tsirelson_grid(self.horizon, self.levels, self.ratio, self.substeps)

    def relaxation(self):
        return RelaxedPayoffConfig(window=self.window, epsilon=self.epsilon)

    def girsanov_grid(self):
        return make_uniform_grid(self.horizon, self.girsanov_steps)

    def hjb_grid(self, n_t=None):
        return HjbGrid(self.x_lo, self.x_hi, self.n_x, n_t or self.n_t, Boundary(self.boundary))

    def resolved(self):
        """Nested config as embedded in reports: every section except output."""
        data = {'schema_version': self.schema_version, 'experiment': self.experiment}
        for (section, key), name in FIELD_MAP.items():
            if section in PROCESS_SECTIONS:
                continue
            value = getattr(self, name)
            data.setdefault(section, {})[key] = list(value) if isinstance(value, tuple) else value
        return data
