"""Time grids, sampled paths and reproducible random streams.

Every Monte Carlo experiment in the lab is a pure function of its config and a
master seed. Path ``i`` of a batch draws its Gaussian increments from its own
counter-based stream ``(master_seed, i)``, so a path can be regenerated on its
own and results do not depend on how batches are split across workers.

Brownian refinement contract: paths are re-sampled per grid. A stream draws
its increments in knot order, so two grids sharing a knot do not share the
value of B there.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .exceptions import GridError, LookaheadError

logger = logging.getLogger(__name__)

# Knot comparisons are exact by construction; the tolerance, in units of the
# grid's smallest step, only absorbs the rounding of caller-side arithmetic
# such as ``t - h``.
KNOT_TOLERANCE = 1e-6

MAX_SEED = 2 ** 64 - 1


@dataclass(frozen=True, eq=False)
class TimeGrid:
    horizon: float
    tsirelson_levels: int
    coarse_knots: tuple
    euler_step: float
    fine_knots: np.ndarray = field(repr=False)

    def __post_init__(self):
        knots = np.array(self.fine_knots, dtype=float)
        knots.setflags(write=False)
        object.__setattr__(self, 'fine_knots', knots)

        if not self.horizon > 0:
            raise GridError(f'horizon must be positive, got {self.horizon}')
        if knots.ndim != 1 or len(knots) < 2:
            raise GridError('a grid needs at least two fine knots')
        if knots[0] != 0.0 or knots[-1] != self.horizon:
            raise GridError('fine knots must run from 0 to the horizon')
        if np.any(np.diff(knots) <= 0):
            raise GridError('fine knots must strictly increase')
        coarse = self.coarse_knots
        if coarse[-1] != self.horizon:
            raise GridError('the last coarse knot must equal the horizon')
        if any(lo >= hi for lo, hi in zip(coarse[:-1], coarse[1:])):
            raise GridError('coarse knots must strictly increase')
        if coarse[0] <= 0:
            raise GridError('coarse knots must stay positive')
        positions = np.searchsorted(knots, coarse)
        if np.any(positions >= len(knots)) or np.any(knots[np.minimum(positions, len(knots) - 1)] != coarse):
            raise GridError('every coarse knot must also be a fine knot')
        if len(coarse) > 1 and self.euler_step > coarse[1] - coarse[0]:
            raise GridError('the finest coarse interval must hold at least one Euler step')
        object.__setattr__(self, '_coarse_positions', tuple(int(p) for p in positions))

    @property
    def n_knots(self):
        return len(self.fine_knots)

    @property
    def n_steps(self):
        return len(self.fine_knots) - 1

    @property
    def steps(self):
        return np.diff(self.fine_knots)

    @property
    def is_tsirelson(self):
        return self.tsirelson_levels >= 2

    def coarse(self, k):
        """Return t_k for k in -K..0."""
        self._check_level(k)
        return self.coarse_knots[k + self.tsirelson_levels]

    def coarse_index(self, k):
        """Return the fine-knot index of t_k."""
        self._check_level(k)
        return self._coarse_positions[k + self.tsirelson_levels]

    def _check_level(self, k):
        if not -self.tsirelson_levels <= k <= 0:
            raise GridError(f'level k={k} is outside -{self.tsirelson_levels}..0')

    def knot_tolerance(self, t):
        """Slack when matching t to a knot; never below float resolution at t."""
        tol = np.maximum(KNOT_TOLERANCE * self.euler_step, 8 * np.spacing(np.abs(t)))
        return tol if np.ndim(tol) else float(tol)

    def level_of(self, t):
        """Return k with t in [t_k, t_{k+1}), or None on the stub [0, t_{-K})."""
        if t < 0 or t >= self.horizon:
            raise GridError(f't={t} is outside [0, {self.horizon})')
        position = int(np.searchsorted(self.coarse_knots, t + self.knot_tolerance(t), side='right')) - 1
        if position < 0:
            return None
        return position - self.tsirelson_levels

    def knot_index(self, t):
        """Return the index of the fine knot equal to t."""
        position = int(np.searchsorted(self.fine_knots, t))
        tol = self.knot_tolerance(t)
        for candidate in (position - 1, position):
            if 0 <= candidate < self.n_knots and abs(self.fine_knots[candidate] - t) <= tol:
                return candidate
        raise GridError(f't={t} is not a fine knot')

    def index_at_or_before(self, t):
        """Index of the last fine knot not after t (left-continuous reads)."""
        position = int(np.searchsorted(self.fine_knots, t + self.knot_tolerance(t), side='right')) - 1
        if position < 0:
            raise GridError(f't={t} precedes the grid')
        return min(position, self.n_knots - 1)

    def indices_at_or_before(self, times):
        """Vectorised index_at_or_before for an array of times in [0, T]."""
        times = np.asarray(times, dtype=float)
        positions = np.searchsorted(self.fine_knots, times + self.knot_tolerance(times), side='right') - 1
        if np.any(positions < 0):
            raise GridError('a time precedes the grid')
        return np.minimum(positions, self.n_knots - 1)

    def step_levels(self):
        """Coarse position (k + K) of the interval holding each Euler step, -1 on the stub."""
        cached = getattr(self, '_step_levels', None)
        if cached is None:
            cached = np.searchsorted(
                np.asarray(self.coarse_knots), self.fine_knots[:-1], side='right') - 1
            cached.setflags(write=False)
            object.__setattr__(self, '_step_levels', cached)
        return cached


def make_tsirelson_grid(T, K, r, m):
    """Build the truncated Tsirelson grid t_k = T r^{-k}, k = -K..0.

    Each coarse interval carries ``m`` equal Euler steps. The stub [0, t_{-K}]
    is cut with the step the next, truncated level t_{-K-1} would carry.
    """
    if not T > 0:
        raise GridError(f'horizon T must be positive, got {T}')
    if int(K) != K or K < 2:
        raise GridError(f'K must be an integer >= 2, got {K}')
    if not 0 < r < 1:
        raise GridError(f'ratio r must lie in (0, 1), got {r}')
    if int(m) != m or m < 1:
        raise GridError(f'euler substeps m must be a positive integer, got {m}')
    K, m = int(K), int(m)

    coarse = tuple(T * r ** j for j in range(K, 0, -1)) + (float(T),)
    ref_step = (coarse[1] - coarse[0]) / m
    stub_step = ref_step * r
    n_stub = max(1, math.ceil(coarse[0] / stub_step - 1e-9))

    pieces = [np.linspace(0.0, coarse[0], n_stub + 1)[:-1]]
    for lo, hi in zip(coarse[:-1], coarse[1:]):
        segment = np.linspace(lo, hi, m + 1)[:-1]
        segment[0] = lo
        pieces.append(segment)
    pieces.append(np.array([coarse[-1]]))
    knots = np.concatenate(pieces)

    grid = TimeGrid(
        horizon=float(T),
        tsirelson_levels=K,
        coarse_knots=coarse,
        euler_step=float(np.min(np.diff(knots))),
        fine_knots=knots,
    )
    logger.debug('tsirelson grid T=%s K=%s r=%s m=%s: %s steps', T, K, r, m, grid.n_steps)
    return grid


def make_uniform_grid(T, n_steps):
    """Uniform Euler grid without Tsirelson levels, for Markovian benchmarks."""
    if not T > 0:
        raise GridError(f'horizon T must be positive, got {T}')
    if int(n_steps) != n_steps or n_steps < 1:
        raise GridError(f'n_steps must be a positive integer, got {n_steps}')
    knots = np.linspace(0.0, T, int(n_steps) + 1)
    knots[-1] = T
    return TimeGrid(
        horizon=float(T),
        tsirelson_levels=0,
        coarse_knots=(float(T),),
        euler_step=float(T) / int(n_steps),
        fine_knots=knots,
    )


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    stream_index: int

    def __post_init__(self):
        if not 0 <= self.master_seed <= MAX_SEED:
            raise ValueError(f'master_seed must be a 64-bit unsigned integer, got {self.master_seed}')
        if self.stream_index < 0:
            raise ValueError(f'stream_index must be non-negative, got {self.stream_index}')

    def generator(self):
        sequence = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.Philox(sequence))

    @classmethod
    def batch(cls, master_seed, n, start=0):
        return tuple(cls(master_seed, start + i) for i in range(n))


def as_stream_batch(streams):
    if isinstance(streams, RngStream):
        return (streams,)
    streams = tuple(streams)
    if not streams:
        raise ValueError('at least one stream is required')
    return streams


class PathView:
    """Read-only view of a batch of paths truncated at fine knot ``index``.

    Coefficients and control laws receive a view rather than a copy; reading
    past the truncation time raises :class:`LookaheadError`.
    """

    __slots__ = ('_values', 'grid', 'index')

    def __init__(self, values, grid, index):
        self._values = values
        self.grid = grid
        self.index = index

    @property
    def time(self):
        return self.grid.fine_knots[self.index]

    @property
    def n_paths(self):
        return self._values.shape[0]

    @property
    def dim(self):
        return self._values.shape[2]

    @property
    def values(self):
        view = self._values[:, :self.index + 1]
        view.flags.writeable = False
        return view

    @property
    def current(self):
        return self.knot_value(self.index)

    def knot_value(self, i):
        if i > self.index:
            raise LookaheadError(f'knot {i} lies after the view time {self.time}')
        value = self._values[:, i]
        value.flags.writeable = False
        return value

    def value_at(self, t):
        if t > self.time + self.grid.knot_tolerance(self.time):
            raise LookaheadError(f'read at t={t} after the view time {self.time}')
        return self.knot_value(self.grid.index_at_or_before(t))

    def increment_quotient(self, s, t):
        i, j = _knot_pair(self.grid, s, t)
        if j > self.index:
            raise LookaheadError(f'quotient up to t={t} after the view time {self.time}')
        knots = self.grid.fine_knots
        return (self._values[:, j] - self._values[:, i]) / (knots[j] - knots[i])

    def until(self, t):
        """Narrow the view to the last knot not after t."""
        index = self.grid.index_at_or_before(t)
        if index > self.index:
            raise LookaheadError(f'cannot widen a view from {self.time} to {t}')
        return PathView(self._values, self.grid, index)


@dataclass(frozen=True, eq=False)
class SamplePath:
    """A batch of paths sampled on the fine knots of ``grid``.

    ``values`` has shape (n_paths, n_knots, dim); a single path is a batch of
    one.
    """

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 3:
            raise GridError(f'path values must have shape (n_paths, n_knots, dim), got {values.shape}')
        if values.shape[1] != self.grid.n_knots:
            raise GridError(
                f'path has {values.shape[1]} knots but the grid has {self.grid.n_knots}')
        values.flags.writeable = False
        object.__setattr__(self, 'values', values)

    @classmethod
    def single(cls, grid, values):
        """Wrap one path given as (n_knots,) or (n_knots, dim)."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        return cls(grid, values[None, :, :])

    @property
    def n_paths(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[2]

    @property
    def terminal(self):
        return self.values[:, -1]

    def scalar(self):
        """Values of a one-dimensional path batch as (n_paths, n_knots)."""
        if self.dim != 1:
            raise GridError(f'path has dimension {self.dim}, expected 1')
        return self.values[:, :, 0]

    def increments(self):
        return np.diff(self.values, axis=1)

    def value_at(self, t):
        return self.values[:, self.grid.index_at_or_before(t)]

    def increment_quotient(self, s, t):
        i, j = _knot_pair(self.grid, s, t)
        knots = self.grid.fine_knots
        return (self.values[:, j] - self.values[:, i]) / (knots[j] - knots[i])

    def truncated(self, index):
        return PathView(self.values, self.grid, index)

    def path(self, i):
        return SamplePath(self.grid, self.values[i:i + 1])

    def select(self, mask):
        return SamplePath(self.grid, self.values[mask])


def _knot_pair(grid, s, t):
    if not s < t:
        raise GridError(f'increment quotient needs s < t, got s={s}, t={t}')
    return grid.knot_index(s), grid.knot_index(t)


def increment_quotient(path: Union[SamplePath, PathView], s, t):
    """(path(t) - path(s)) / (t - s) for fine knots s < t, per path."""
    return path.increment_quotient(s, t)


def sample_brownian(grid: TimeGrid, streams: Union[RngStream, Sequence[RngStream]], dimension=1):
    """Draw a batch of d-dimensional Brownian paths, one per stream."""
    if int(dimension) != dimension or dimension < 1:
        raise ValueError(f'dimension must be a positive integer, got {dimension}')
    streams = as_stream_batch(streams)
    scale = np.sqrt(grid.steps)[:, None]
    increments = np.empty((len(streams), grid.n_steps, int(dimension)))
    for row, stream in zip(increments, streams):
        row[...] = stream.generator().standard_normal((grid.n_steps, int(dimension))) * scale
    values = np.zeros((len(streams), grid.n_knots, int(dimension)))
    np.cumsum(increments, axis=1, out=values[:, 1:])
    return SamplePath(grid, values)
