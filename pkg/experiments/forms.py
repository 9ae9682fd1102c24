from django import forms
from django.core.validators import MaxValueValidator, MinValueValidator

from simulation.exceptions import GridError
from simulation.hjb import Boundary, HjbGrid, action_sample, required_time_steps
from simulation.paths import MAX_SEED, make_tsirelson_grid
from simulation.tsirelson import RELATIVE_TOLERANCE

from .benchmarks import hjb_problems
from .config import EXPERIMENT_CHOICES, SCHEMA_VERSION, ExperimentConfig

HJB_EXPERIMENTS = ('hjb-benchmark', 'equivalence-triangle')
CFL_FIELDS = ('horizon', 'x_lo', 'x_hi', 'n_x', 'n_t', 'action_resolution', 'boundary')


class IntegerListField(forms.CharField):
    """Comma-separated integers, cleaned to a tuple."""

    def to_python(self, value):
        value = super().to_python(value)
        if not value:
            return ()
        try:
            return tuple(int(part) for part in value.split(','))
        except ValueError:
            raise forms.ValidationError('Enter a list of integers.', code='invalid')


class ExperimentConfigForm(forms.Form):
    schema_version = forms.IntegerField()
    experiment = forms.ChoiceField(choices=EXPERIMENT_CHOICES)

    # [grid]
    horizon = forms.FloatField(min_value=0.0)
    levels = forms.IntegerField(
        min_value=2,
        error_messages={'min_value': 'K must be at least 2: the Tsirelson drift needs two coarse levels.'},
    )
    ratio = forms.FloatField()
    substeps = forms.IntegerField(min_value=1)

    # [mc]
    n_paths = forms.IntegerField(min_value=2)
    master_seed = forms.IntegerField(validators=[MinValueValidator(0), MaxValueValidator(MAX_SEED)])
    chunk_size = forms.IntegerField(min_value=1)

    # [relaxation]; blanks are filled from the grid
    epsilon = forms.FloatField(required=False)
    window = forms.FloatField(required=False)

    # [hjb]
    x_lo = forms.FloatField()
    x_hi = forms.FloatField()
    n_x = forms.IntegerField(min_value=3)
    n_t = forms.IntegerField(min_value=1)
    action_resolution = forms.IntegerField(min_value=2)
    boundary = forms.ChoiceField(choices=[(b.value, b.value) for b in Boundary])
    mc_steps = forms.IntegerField(min_value=1)

    # [girsanov]
    girsanov_paths = forms.IntegerField(min_value=2)
    girsanov_steps = forms.IntegerField(min_value=1)
    log_weight_cap = forms.FloatField(min_value=0.0)
    projection_paths = forms.IntegerField(min_value=2)
    projection_strides = IntegerListField()

    # [checks]
    uniformity_levels = IntegerListField()
    recursion_paths = forms.IntegerField(min_value=1)
    recursion_depth = forms.IntegerField(min_value=2)
    recovery_paths = forms.IntegerField(min_value=1)
    qv_window = forms.IntegerField(min_value=1)
    qv_steps = forms.IntegerField(min_value=1)

    # [output]
    output_dir = forms.CharField(required=False)
    write_csv = forms.BooleanField(required=False)
    csv_time_stride = forms.IntegerField(min_value=1)
    csv_space_stride = forms.IntegerField(min_value=1)

    def clean_schema_version(self):
        version = self.cleaned_data['schema_version']
        if version != SCHEMA_VERSION:
            raise forms.ValidationError(f'Unsupported schema_version {version}; this build reads {SCHEMA_VERSION}.')
        return version

    def clean_horizon(self):
        horizon = self.cleaned_data['horizon']
        if not horizon > 0:
            raise forms.ValidationError('T must be positive.')
        return horizon

    def clean_ratio(self):
        ratio = self.cleaned_data['ratio']
        if not 0 < ratio < 1:
            raise forms.ValidationError('r must lie strictly between 0 and 1.')
        return ratio

    def clean_epsilon(self):
        epsilon = self.cleaned_data.get('epsilon')
        if epsilon is not None and not epsilon > 0:
            raise forms.ValidationError(
                'epsilon must be positive: the exact-zero relaxed payoff is degenerate under discretization.')
        return epsilon

    def clean_projection_strides(self):
        strides = self.cleaned_data['projection_strides']
        if len(strides) < 2:
            raise forms.ValidationError('Give at least two projection strides.')
        if any(s < 1 for s in strides):
            raise forms.ValidationError('Projection strides must be positive.')
        if any(coarse % fine or coarse <= fine for coarse, fine in zip(strides[:-1], strides[1:])):
            raise forms.ValidationError('Projection strides must refine: each one a proper divisor of the previous.')
        return strides

    def clean(self):
        cleaned_data = super().clean()
        grid = self._clean_grid(cleaned_data)
        if grid is not None:
            self._clean_relaxation(cleaned_data, grid)
            self._clean_levels(cleaned_data, grid)

        x_lo, x_hi = cleaned_data.get('x_lo'), cleaned_data.get('x_hi')
        if x_lo is not None and x_hi is not None and not x_lo < 0.0 < x_hi:
            self.add_error('x_hi', 'The HJB domain must contain x0 = 0: need x_lo < 0 < x_hi.')
        elif cleaned_data.get('experiment') in HJB_EXPERIMENTS and all(
                cleaned_data.get(name) is not None for name in CFL_FIELDS):
            self._clean_cfl(cleaned_data)

        window, steps = cleaned_data.get('qv_window'), cleaned_data.get('qv_steps')
        if window and steps and window > steps:
            self.add_error('qv_window', f'qv_window={window} is longer than the {steps}-step path.')
        return cleaned_data

    def _clean_grid(self, cleaned_data):
        params = [cleaned_data.get(name) for name in ('horizon', 'levels', 'ratio', 'substeps')]
        if any(p is None for p in params):
            return None
        try:
            return make_tsirelson_grid(*params)
        except GridError as exc:
            self.add_error('levels', str(exc))
            return None

    def _clean_relaxation(self, cleaned_data, grid):
        if cleaned_data.get('epsilon') is None and 'epsilon' not in self.errors:
            cleaned_data['epsilon'] = grid.horizon * RELATIVE_TOLERANCE
        window = cleaned_data.get('window')
        if window is None:
            cleaned_data['window'] = grid.euler_step
        elif window < grid.euler_step * (1 - 1e-9):
            self.add_error('window', f'h={window} is shorter than the Euler step {grid.euler_step:.6g}.')

    def _clean_levels(self, cleaned_data, grid):
        K = grid.tsirelson_levels
        experiment = cleaned_data.get('experiment')
        levels = cleaned_data.get('uniformity_levels') or ()
        bad = [k for k in levels if not -K + 1 <= k <= -1]
        if experiment == 'uniformity' and bad:
            self.add_error('uniformity_levels', f'Uniformity levels must lie in {-K + 1}..-1, got {bad}.')
        depth = cleaned_data.get('recursion_depth')
        if experiment == 'recursion-check' and depth is not None and depth > K:
            self.add_error('recursion_depth', f'recursion_depth={depth} exceeds K={K}.')
        strides = cleaned_data.get('projection_strides') or ()
        if experiment == 'girsanov-check' and strides and max(strides) > grid.n_steps:
            self.add_error('projection_strides', f'A stride of {max(strides)} exceeds the {grid.n_steps} grid steps.')

    def _clean_cfl(self, cleaned_data):
        grid = HjbGrid(cleaned_data['x_lo'], cleaned_data['x_hi'], cleaned_data['n_x'], cleaned_data['n_t'],
                       Boundary(cleaned_data['boundary']))
        required = 1
        for problem in hjb_problems(cleaned_data['horizon']).values():
            sample = action_sample(problem.actions, cleaned_data['action_resolution'])
            required = max(required, required_time_steps(problem, grid, sample))
        if grid.n_t < required:
            self.add_error('n_t', f'n_t={grid.n_t} breaks the CFL bound of the explicit scheme; '
                                  f'use n_t >= {required}.')

    def to_config(self):
        return ExperimentConfig.from_cleaned(self.cleaned_data)

    def diagnostics(self):
        """Every error as 'field: message', in field order."""
        lines = []
        for field, errors in self.errors.items():
            for error in errors:
                lines.append(error if field == '__all__' else f'{field}: {error}')
        return lines
