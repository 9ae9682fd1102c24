"""Explicit upwind finite differences for the one-dimensional HJB equation

    dv/dt + sup_a [ 1/2 sigma^2(t, x, a) v_xx + b(t, x, a) v_x ] = 0,  v(T, x) = g(x).

The drift term takes the forward difference where b > 0 and the backward one
where b < 0, separately for every action inside the sup. The scheme is
monotone as long as

    dt * (max sigma^2 / dx^2 + max |b| / dx) <= 1,

and :func:`solve` refuses grids that break the bound (with a safety factor).
"""
import csv
import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import CflViolation
from .sde import ActionSet, Policy

logger = logging.getLogger(__name__)

CFL_SAFETY = 0.95


class Boundary(enum.Enum):
    DIRICHLET = 'dirichlet'
    NEUMANN = 'neumann'


@dataclass(frozen=True)
class HjbGrid:
    x_lo: float
    x_hi: float
    n_x: int
    n_t: int
    boundary: Boundary = Boundary.DIRICHLET

    def __post_init__(self):
        if not self.x_lo < self.x_hi:
            raise ValueError(f'need x_lo < x_hi, got [{self.x_lo}, {self.x_hi}]')
        if self.n_x < 3:
            raise ValueError(f'n_x must be at least 3, got {self.n_x}')
        if self.n_t < 1:
            raise ValueError(f'n_t must be positive, got {self.n_t}')
        object.__setattr__(self, 'boundary', Boundary(self.boundary))

    @property
    def dx(self):
        return (self.x_hi - self.x_lo) / (self.n_x - 1)

    @property
    def x(self):
        return np.linspace(self.x_lo, self.x_hi, self.n_x)

    def times(self, horizon):
        return np.linspace(0.0, horizon, self.n_t + 1)

    def with_time_steps(self, n_t):
        return HjbGrid(self.x_lo, self.x_hi, self.n_x, n_t, self.boundary)


@dataclass(frozen=True, eq=False)
class HjbSolution:
    """v on every (time layer, space node) and the maximizing action per step.

    ``policy[n]`` is the action used between layers n and n+1.
    """

    grid: HjbGrid
    times: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    policy: np.ndarray = field(repr=False)

    def layer_of(self, t):
        n = int(np.searchsorted(self.times, t, side='right')) - 1
        return min(max(n, 0), self.grid.n_t - 1)

    def node_of(self, x):
        index = np.rint((np.asarray(x, dtype=float) - self.grid.x_lo) / self.grid.dx).astype(int)
        return np.clip(index, 0, self.grid.n_x - 1)

    def value_at(self, t, x):
        """v at the nearest time layer, linear in x."""
        n = int(np.argmin(np.abs(self.times - t)))
        return np.interp(x, self.x, self.v[n])

    def action_at(self, t, x):
        return self.policy[self.layer_of(t), self.node_of(x)]

    def to_csv(self, path, time_stride=1, space_stride=1):
        """Write rows (t, x, v, a*); the terminal layer repeats the last actions."""
        policy = np.vstack([self.policy, self.policy[-1:]])
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle)
            writer.writerow(['t', 'x', 'v', 'a_star'])
            layers = sorted(set(range(0, len(self.times), time_stride)) | {len(self.times) - 1})
            for n in layers:
                for i in range(0, len(self.x), space_stride):
                    writer.writerow([
                        repr(float(self.times[n])), repr(float(self.x[i])),
                        repr(float(self.v[n, i])), repr(float(policy[n, i])),
                    ])


def action_sample(actions, resolution=21):
    """A 1-D array of candidate actions from an ActionSet or an array."""
    if isinstance(actions, ActionSet):
        if actions.dim != 1:
            raise ValueError('the HJB solver handles scalar actions only')
        actions = actions.sample(resolution)[:, 0]
    sample = np.asarray(actions, dtype=float).ravel()
    if sample.size == 0:
        raise ValueError('the action sample is empty')
    return sample


def _coefficients(problem, t, x, sample):
    a = sample[:, None]
    b = np.broadcast_to(np.asarray(problem.state_drift(t, x, a), dtype=float), (len(sample),) + np.shape(x))
    s = np.broadcast_to(np.asarray(problem.state_diffusion(t, x, a), dtype=float), (len(sample),) + np.shape(x))
    return b, s


def hamiltonian(t, x, z, gamma, problem, actions, z_backward=None):
    """sup_a [1/2 gamma sigma^2 + z b] over a finite action sample.

    With ``z_backward`` the drift term reads max(b, 0) z + min(b, 0) z_backward.
    Returns (H, a*) with the smallest-index maximizer; scalar inputs give
    scalar outputs.
    """
    sample = action_sample(actions)
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.broadcast_to(np.asarray(z, dtype=float), x.shape)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), x.shape)
    b, s = _coefficients(problem, t, x, sample)
    if z_backward is None:
        drift_term = b * z
    else:
        zb = np.broadcast_to(np.asarray(z_backward, dtype=float), x.shape)
        drift_term = np.maximum(b, 0.0) * z + np.minimum(b, 0.0) * zb
    candidates = 0.5 * gamma * s ** 2 + drift_term
    best = np.argmax(candidates, axis=0)
    H = np.take_along_axis(candidates, best[None, :], axis=0)[0]
    a_star = sample[best]
    if scalar:
        return float(H[0]), float(a_star[0])
    return H, a_star


def _check_problem(problem):
    if not problem.is_state_dependent:
        raise ValueError('the HJB solver needs a problem built with ControlProblem.state_dependent')


def required_time_steps(problem, grid: HjbGrid, actions, horizon=None):
    """Smallest n_t meeting the monotonicity bound with the safety factor."""
    _check_problem(problem)
    horizon = problem.horizon if horizon is None else horizon
    sample = action_sample(actions)
    x = grid.x
    rate = 0.0
    for t in grid.times(horizon):
        b, s = _coefficients(problem, t, x, sample)
        rate = max(rate, float(np.max(s ** 2)) / grid.dx ** 2 + float(np.max(np.abs(b))) / grid.dx)
    if rate == 0.0:
        return 1
    return max(1, math.ceil(horizon * rate / CFL_SAFETY - 1e-9))


def solve(problem, grid: HjbGrid, actions) -> HjbSolution:
    """Backward explicit time stepping from v(T) = g."""
    _check_problem(problem)
    sample = action_sample(actions)
    x0 = float(problem.x0[0])
    if not grid.x_lo < x0 < grid.x_hi:
        raise ValueError(f'x0={x0} must lie inside ({grid.x_lo}, {grid.x_hi})')
    required = required_time_steps(problem, grid, sample)
    if grid.n_t < required:
        raise CflViolation(grid.n_t, required)

    times = grid.times(problem.horizon)
    dt = problem.horizon / grid.n_t
    dx = grid.dx
    x = grid.x
    terminal = np.broadcast_to(np.asarray(problem.terminal(x), dtype=float), x.shape)
    v = np.empty((grid.n_t + 1, grid.n_x))
    policy = np.empty((grid.n_t, grid.n_x))
    v[-1] = terminal

    interior = x[1:-1]
    for n in range(grid.n_t - 1, -1, -1):
        upper = v[n + 1]
        z_forward = (upper[2:] - upper[1:-1]) / dx
        z_back = (upper[1:-1] - upper[:-2]) / dx
        gamma = (upper[2:] - 2.0 * upper[1:-1] + upper[:-2]) / dx ** 2
        H, a_star = hamiltonian(times[n], interior, z_forward, gamma, problem, sample, z_backward=z_back)
        v[n, 1:-1] = upper[1:-1] + dt * H
        policy[n, 1:-1] = a_star
        policy[n, 0], policy[n, -1] = a_star[0], a_star[-1]
        if grid.boundary is Boundary.DIRICHLET:
            v[n, 0], v[n, -1] = terminal[0], terminal[-1]
        else:
            v[n, 0], v[n, -1] = v[n, 1], v[n, -2]

    logger.debug('hjb solve: n_x=%d n_t=%d (required %d), v(0, x0)=%.6f',
                 grid.n_x, grid.n_t, required, float(np.interp(x0, x, v[0])))
    return HjbSolution(grid=grid, times=times, x=x, v=v, policy=policy)


def extract_policy(solution: HjbSolution) -> Policy:
    """Feedback policy reading a* at the current time layer and the nearest node."""

    def law(t, state):
        return solution.action_at(t, np.asarray(state)[:, 0])

    return Policy.feedback(law, label='hjb-feedback')
