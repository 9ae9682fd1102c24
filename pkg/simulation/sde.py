"""Euler-Maruyama simulation of controlled path-dependent SDEs.

    X_{j+1} = X_j + b(t_j, X_{[0,t_j]}, a_j) dt_j + sigma(t_j, X_{[0,t_j]}, a_j) dB_j

Coefficients and actions are evaluated at the left endpoint of each step (Ito
convention). The engine only realises the strong formulation, a fixed B
driving X; weak-formulation sampling is done by reweighting in
:mod:`simulation.girsanov`.

All arrays carry a leading path axis, so a batch of independent paths is
advanced in one sweep over the grid.
"""
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, NamedTuple, Optional

import numpy as np

from .exceptions import NumericalAbort, PolicyError
from .paths import PathView, SamplePath, TimeGrid, sample_brownian

logger = logging.getLogger(__name__)

DEFAULT_COEFFICIENT_BOUND = 1e6


class PolicyKind(enum.Enum):
    OPEN_LOOP = 'open-loop'
    CLOSED_LOOP = 'closed-loop'
    FEEDBACK = 'feedback'
    AUGMENTED = 'augmented'

    @property
    def loop(self):
        """Which value a family of this kind bounds: 'open' or 'closed'."""
        if self is PolicyKind.OPEN_LOOP:
            return 'open'
        if self in (PolicyKind.CLOSED_LOOP, PolicyKind.FEEDBACK):
            return 'closed'
        return 'augmented'


class AugmentedState(NamedTuple):
    """(B, X, Gamma) views handed to augmented laws; ``pair`` is (B, X)."""

    B: PathView
    X: PathView
    Gamma: PathView

    @property
    def pair(self):
        return self.B, self.X


@dataclass(frozen=True)
class Policy:
    """A control law together with the information it is allowed to read.

    open-loop laws get ``(t, B-view)``, closed-loop laws ``(t, X-view)``,
    feedback laws ``(t, X_t)`` and augmented laws ``(t, AugmentedState)``.
    Laws must be re-entrant: no mutable state shared across calls.
    """

    kind: PolicyKind
    law: Callable = field(repr=False)
    label: str = ''
    params: Mapping = field(default_factory=dict)

    @classmethod
    def open_loop(cls, law, label='', **params):
        return cls(PolicyKind.OPEN_LOOP, law, label, params)

    @classmethod
    def closed_loop(cls, law, label='', **params):
        return cls(PolicyKind.CLOSED_LOOP, law, label, params)

    @classmethod
    def feedback(cls, law, label='', **params):
        return cls(PolicyKind.FEEDBACK, law, label, params)

    @classmethod
    def augmented(cls, law, label='', **params):
        return cls(PolicyKind.AUGMENTED, law, label, params)

    @classmethod
    def constant(cls, value, kind=PolicyKind.OPEN_LOOP, label=''):
        """a(t) = value, wrapped as the given kind."""
        return cls.deterministic(lambda t: value, kind, label or f'a={value:g}', value=value)

    @classmethod
    def deterministic(cls, schedule, kind=PolicyKind.OPEN_LOOP, label='', **params):
        """A law that depends on t only; identical under every kind."""

        def law(t, view):
            return np.full(n_paths_of(view), schedule(t), dtype=float)

        return cls(kind, law, label, params)

    def act(self, t, B, X, Gamma):
        if self.kind is PolicyKind.OPEN_LOOP:
            return self.law(t, B)
        if self.kind is PolicyKind.CLOSED_LOOP:
            return self.law(t, X)
        if self.kind is PolicyKind.FEEDBACK:
            return self.law(t, X.current)
        return self.law(t, AugmentedState(B, X, Gamma))


def n_paths_of(view):
    """Batch size of whatever a law was handed: a view, an augmented state or X_t."""
    if isinstance(view, AugmentedState):
        return view.B.n_paths
    if isinstance(view, PathView):
        return view.n_paths
    return len(view)


@dataclass(frozen=True, eq=False)
class ActionSet:
    """An interval per coordinate, or a finite set of action points."""

    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    points: Optional[np.ndarray] = None

    @classmethod
    def interval(cls, lo, hi, dim=1):
        lower = np.broadcast_to(np.asarray(lo, dtype=float), (dim,)).copy()
        upper = np.broadcast_to(np.asarray(hi, dtype=float), (dim,)).copy()
        if np.any(lower > upper):
            raise ValueError(f'empty action interval [{lo}, {hi}]')
        return cls(lower=lower, upper=upper)

    @classmethod
    def finite(cls, points):
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if len(points) == 0:
            raise ValueError('a finite action set needs at least one point')
        return cls(points=points)

    @property
    def dim(self):
        return self.points.shape[1] if self.points is not None else len(self.lower)

    @property
    def is_finite(self):
        return self.points is not None

    def clamp(self, actions):
        """Project actions onto the set; returns (actions, number of paths moved)."""
        if self.is_finite:
            distance = np.linalg.norm(actions[:, None, :] - self.points[None, :, :], axis=2)
            nearest = self.points[np.argmin(distance, axis=1)]
            moved = np.any(np.abs(nearest - actions) > 1e-12, axis=1)
            return nearest, int(np.count_nonzero(moved))
        clamped = np.clip(actions, self.lower, self.upper)
        moved = np.any(clamped != actions, axis=1)
        return clamped, int(np.count_nonzero(moved))

    def sample(self, resolution):
        """A finite sample of the set: the points themselves, or a uniform lattice."""
        if self.is_finite:
            return self.points.copy()
        if resolution < 2:
            raise ValueError(f'action resolution must be at least 2, got {resolution}')
        axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=1)

    def reference(self):
        return self.points[0].copy() if self.is_finite else self.lower.copy()


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """Coefficients, payoff and action set of a controlled SDE.

    ``drift(t, X_view, a)`` returns (n_paths, n), ``diffusion(t, X_view, a)``
    returns (n_paths, n, d) and ``payoff(solution)`` returns one value per
    path. Markovian problems built with :meth:`state_dependent` also keep the
    raw state functions for the HJB solver.
    """

    n: int
    d: int
    x0: np.ndarray
    horizon: float
    actions: ActionSet
    drift: Callable = field(repr=False)
    diffusion: Callable = field(repr=False)
    payoff: Callable = field(repr=False)
    coefficient_bound: float = DEFAULT_COEFFICIENT_BOUND
    state_drift: Optional[Callable] = field(default=None, repr=False)
    state_diffusion: Optional[Callable] = field(default=None, repr=False)
    terminal: Optional[Callable] = field(default=None, repr=False)
    label: str = ''

    def __post_init__(self):
        x0 = np.broadcast_to(np.asarray(self.x0, dtype=float), (self.n,)).copy()
        object.__setattr__(self, 'x0', x0)
        if self.n < 1 or self.d < 1:
            raise ValueError(f'dimensions must be positive, got n={self.n}, d={self.d}')
        if not self.horizon > 0:
            raise ValueError(f'horizon must be positive, got {self.horizon}')

    @classmethod
    def state_dependent(cls, drift, diffusion, terminal, *, x0, horizon, actions,
                        coefficient_bound=DEFAULT_COEFFICIENT_BOUND, label=''):
        """One-dimensional Markovian problem from b(t, x, a), sigma(t, x, a), g(x).

        The state functions act elementwise on arrays of states and actions.
        """

        def path_drift(t, view, a):
            return drift(t, view.current[:, 0], a[:, 0])

        def path_diffusion(t, view, a):
            return diffusion(t, view.current[:, 0], a[:, 0])

        def path_payoff(solution):
            return terminal(solution.X.terminal[:, 0])

        return cls(
            n=1, d=1, x0=x0, horizon=horizon, actions=actions,
            drift=path_drift, diffusion=path_diffusion, payoff=path_payoff,
            coefficient_bound=coefficient_bound,
            state_drift=drift, state_diffusion=diffusion, terminal=terminal,
            label=label,
        )

    @property
    def is_state_dependent(self):
        return self.state_drift is not None and self.state_diffusion is not None and self.terminal is not None

    def driftless(self):
        """The same problem with b = 0, used as the reference measure P^0."""

        def zero_drift(t, view, a):
            return np.zeros((view.n_paths, self.n))

        state_drift = None
        if self.state_drift is not None:
            def state_drift(t, x, a):
                return np.zeros(np.broadcast(x, a).shape)
        return replace(self, drift=zero_drift, state_drift=state_drift,
                       label=f'{self.label} (driftless)' if self.label else 'driftless')

    def with_payoff(self, payoff):
        return replace(self, payoff=payoff)


@dataclass(frozen=True, eq=False)
class SimulatedSolution:
    """Paths (B, X, alpha, Gamma) of a simulated batch.

    ``alpha`` holds the action used on each Euler step at the step's left
    knot; the terminal knot repeats the last action. ``Gamma`` is the running
    integral of alpha.
    """

    grid: TimeGrid
    B: SamplePath
    X: SamplePath
    alpha: SamplePath
    Gamma: SamplePath
    clamp_violations: int = 0

    @property
    def n_paths(self):
        return self.X.n_paths

    @property
    def actions(self):
        """Per-step actions, shape (n_paths, n_steps, m)."""
        return self.alpha.values[:, :-1]

    @property
    def pair(self):
        """The augmented state X~ = (B, X) as one path batch."""
        return SamplePath(self.grid, np.concatenate([self.B.values, self.X.values], axis=2))

    @property
    def triple(self):
        return SamplePath(
            self.grid, np.concatenate([self.B.values, self.X.values, self.Gamma.values], axis=2))

    def path(self, i):
        return SimulatedSolution(
            self.grid, self.B.path(i), self.X.path(i), self.alpha.path(i), self.Gamma.path(i), 0)


def conform(value, shape, what, step=None):
    """Coerce a coefficient or law output to ``shape`` without guessing axes."""
    array = np.asarray(value, dtype=float)
    if array.shape == shape:
        return array
    if array.ndim == 0 or (array.ndim <= len(shape) and array.shape == shape[len(shape) - array.ndim:]):
        return np.broadcast_to(array, shape)
    if array.size == math.prod(shape):
        return array.reshape(shape)
    raise NumericalAbort(f'{what} returned shape {array.shape}, expected {shape}', step=step)


def _check(values, what, step, bound=None):
    flat = values.reshape(values.shape[0], -1)
    bad = ~np.all(np.isfinite(flat), axis=1)
    if np.any(bad):
        raise NumericalAbort(f'{what} is not finite', step=step, path=int(np.argmax(bad)))
    if bound is not None:
        over = np.any(np.abs(flat) > bound, axis=1)
        if np.any(over):
            raise NumericalAbort(f'{what} exceeds the coefficient bound {bound:g}',
                                 step=step, path=int(np.argmax(over)))


def euler_increment(problem, t, view, actions, dt, dB, step):
    """b dt + sigma dB for one step; shared by the engine and policy rewrites."""
    n_paths = view.n_paths
    b = conform(problem.drift(t, view, actions), (n_paths, problem.n), 'drift', step)
    s = conform(problem.diffusion(t, view, actions), (n_paths, problem.n, problem.d), 'diffusion', step)
    _check(b, 'drift', step, problem.coefficient_bound)
    _check(s, 'diffusion', step, problem.coefficient_bound)
    return b * dt + np.einsum('pnd,pd->pn', s, dB)


def resolve_action(problem, policy, t, B, X, Gamma, step):
    """Evaluate, shape-check and clamp a policy action; returns (actions, n_clamped)."""
    raw = policy.act(t, B, X, Gamma)
    actions = conform(raw, (X.n_paths, problem.actions.dim), 'policy', step)
    _check(actions, 'policy action', step)
    return problem.actions.clamp(actions)


def simulate(problem: ControlProblem, policy: Policy, grid: TimeGrid, streams=None, *,
             brownian: Optional[SamplePath] = None) -> SimulatedSolution:
    """Simulate a batch of controlled paths, one per stream.

    A pre-drawn ``brownian`` batch may replace the streams; the splice and
    recovery checks rely on that.
    """
    if brownian is None:
        if streams is None:
            raise ValueError('simulate needs streams or a Brownian path')
        brownian = sample_brownian(grid, streams, problem.d)
    elif brownian.grid is not grid and not np.array_equal(brownian.grid.fine_knots, grid.fine_knots):
        raise ValueError('the Brownian path lives on a different grid')
    if brownian.dim != problem.d:
        raise ValueError(f'Brownian dimension {brownian.dim} does not match d={problem.d}')
    if not np.isclose(grid.horizon, problem.horizon):
        raise ValueError(f'grid horizon {grid.horizon} differs from problem horizon {problem.horizon}')
    return _integrate(problem, policy, grid, brownian)


def simulate_augmented(problem: ControlProblem, policy: Policy, grid: TimeGrid, streams=None, *,
                       brownian: Optional[SamplePath] = None) -> SimulatedSolution:
    """Simulate the augmented state (B, X, Gamma) for a law that reads all three.

    The B-block has zero drift and identity diffusion, the Gamma-block drift
    alpha and zero diffusion; X follows the same dynamics as :func:`simulate`.
    """
    if policy.kind is not PolicyKind.AUGMENTED:
        raise PolicyError(f'simulate_augmented needs an augmented policy, got {policy.kind.value}')
    return simulate(problem, policy, grid, streams, brownian=brownian)


def _integrate(problem, policy, grid, brownian):
    n_paths, m = brownian.n_paths, problem.actions.dim
    knots, steps = grid.fine_knots, grid.steps
    dB = brownian.increments()

    X = np.empty((n_paths, grid.n_knots, problem.n))
    X[:, 0] = problem.x0
    alpha = np.empty((n_paths, grid.n_knots, m))
    Gamma = np.zeros((n_paths, grid.n_knots, m))
    clamps = 0

    for j in range(grid.n_steps):
        t = knots[j]
        B_view = brownian.truncated(j)
        X_view = PathView(X, grid, j)
        Gamma_view = PathView(Gamma, grid, j)
        actions, moved = resolve_action(problem, policy, t, B_view, X_view, Gamma_view, j)
        clamps += moved
        X[:, j + 1] = X[:, j] + euler_increment(problem, t, X_view, actions, steps[j], dB[:, j], j)
        alpha[:, j] = actions
        Gamma[:, j + 1] = Gamma[:, j] + actions * steps[j]
    alpha[:, -1] = alpha[:, -2]

    if clamps:
        logger.debug('%s: %d clamped actions over %d paths', policy.label or policy.kind.value, clamps, n_paths)
    return SimulatedSolution(
        grid=grid,
        B=brownian,
        X=SamplePath(grid, X),
        alpha=SamplePath(grid, alpha),
        Gamma=SamplePath(grid, Gamma),
        clamp_violations=clamps,
    )


def payoff(problem: ControlProblem, solution: SimulatedSolution) -> np.ndarray:
    """g evaluated on every simulated path; g may read B, X, alpha and Gamma."""
    values = conform(problem.payoff(solution), (solution.n_paths,), 'payoff')
    bad = ~np.isfinite(values)
    if np.any(bad):
        raise NumericalAbort('payoff is not finite', path=int(np.argmax(bad)))
    return np.array(values, dtype=float)
