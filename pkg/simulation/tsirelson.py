"""Ingredients of the open/closed-loop counterexample built on Tsirelson's drift.

On the grid t_k = T r^{-k} the drift reads the state's increment quotient over
the previous coarse interval,

    mu(t, x) = theta((x_{t_k} - x_{t_{k-1}}) / (t_k - t_{k-1})),  t in [t_k, t_{k+1}),

and is 0 on the stub [0, t_{-K}) and on the first level, where t_{k-1} is cut
off by the truncation. The payoff is the indicator that the control recovered
from X - B matches mu in L1, relaxed to a tolerance eps.

Integrals over the fine grid use the trapezoid rule on one-sided limits: both
integrands are constant on each Euler step, so the rule reduces to
sum_j dt_j * f_j and never charges the jump at a coarse knot.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from .estimators import FamilyMember, PolicyFamily
from .exceptions import GridError
from .paths import SamplePath, TimeGrid, as_stream_batch
from .sde import ActionSet, ControlProblem, Policy, SimulatedSolution, simulate

logger = logging.getLogger(__name__)

# Default relative tolerance: eps = T * RELATIVE_TOLERANCE.
RELATIVE_TOLERANCE = 1e-3


def theta(x):
    """Fractional part x - floor(x), in [0, 1)."""
    value = np.asarray(x, dtype=float)
    frac = value - np.floor(value)
    # x - floor(x) rounds up to 1.0 for tiny negative x
    frac = np.where(frac >= 1.0, 0.0, frac)
    return float(frac) if frac.ndim == 0 else frac


def require_tsirelson(grid: TimeGrid):
    if not grid.is_tsirelson:
        raise GridError('this operation needs a Tsirelson grid with at least two levels')


@dataclass(frozen=True)
class TsirelsonDrift:
    """mu(t, x) on a given grid; also usable directly as a closed-loop law."""

    grid: TimeGrid

    def __post_init__(self):
        require_tsirelson(self.grid)

    def __call__(self, t, x):
        return mu(t, x)


@dataclass(frozen=True)
class RelaxedPayoffConfig:
    window: float
    epsilon: float

    def __post_init__(self):
        if not self.window > 0:
            raise ValueError(f'derivative window h must be positive, got {self.window}')
        if not self.epsilon > 0:
            raise ValueError('eps must be positive: the exact-zero payoff set is degenerate '
                             'under discretization')

    @classmethod
    def default(cls, grid, relative_tolerance=RELATIVE_TOLERANCE):
        return cls(window=grid.euler_step, epsilon=grid.horizon * relative_tolerance)

    def check(self, grid):
        if self.window < grid.euler_step * (1 - 1e-9):
            raise GridError(f'window h={self.window} is shorter than one Euler step {grid.euler_step}')


def mu(t, x):
    """Tsirelson drift at time t for each path of ``x`` (a SamplePath or PathView)."""
    grid = x.grid
    require_tsirelson(grid)
    if t >= grid.horizon:
        raise GridError(f'mu is defined on [0, T), got t={t}')
    k = grid.level_of(t)
    if k is None or k == -grid.tsirelson_levels:
        return np.zeros(x.n_paths)
    quotient = x.increment_quotient(grid.coarse(k - 1), grid.coarse(k))
    return theta(quotient[:, 0])


def closed_loop_tsirelson_policy():
    """alpha_t = mu(t, X), which reads the state path only."""
    return Policy.closed_loop(mu, label='tsirelson-mu')


def level_quotients(path: SamplePath):
    """Increment quotient of a scalar path over every coarse interval.

    Column i holds the quotient over [t_{i-1-K}, t_{i-K}] for i >= 1; column 0
    is unused.
    """
    grid = path.grid
    positions = [grid.coarse_index(k) for k in range(-grid.tsirelson_levels, 1)]
    values = path.scalar()[:, positions]
    knots = grid.fine_knots[positions]
    quotients = np.zeros_like(values)
    quotients[:, 1:] = (values[:, 1:] - values[:, :-1]) / (knots[1:] - knots[:-1])
    return quotients


def mu_steps(X: SamplePath):
    """mu at the left knot of every Euler step, shape (n_paths, n_steps)."""
    grid = X.grid
    require_tsirelson(grid)
    levels = grid.step_levels()
    active = levels >= 1
    out = np.zeros((X.n_paths, grid.n_steps))
    out[:, active] = theta(level_quotients(X)[:, levels[active]])
    return out


def alpha_star(t, B: SamplePath, X: SamplePath, h):
    """Backward quotient of X - B over [(t-h)^+, t], clipped to [0, 1].

    The window start snaps to the last fine knot not after t - h.
    """
    grid = X.grid
    if t <= 0:
        raise GridError('alpha* is defined for t > 0')
    j = grid.knot_index(t)
    i = grid.index_at_or_before(max(t - h, 0.0))
    i = min(i, j - 1)
    drift = X.scalar() - B.scalar()
    knots = grid.fine_knots
    return np.clip((drift[:, j] - drift[:, i]) / (knots[j] - knots[i]), 0.0, 1.0)


def alpha_star_steps(B: SamplePath, X: SamplePath, h):
    """alpha* on every Euler step (evaluated at the step's right knot)."""
    grid = X.grid
    knots = grid.fine_knots
    right = np.arange(1, grid.n_knots)
    left = np.minimum(grid.indices_at_or_before(np.maximum(knots[right] - h, 0.0)), right - 1)
    drift = X.scalar() - B.scalar()
    return np.clip((drift[:, right] - drift[:, left]) / (knots[right] - knots[left]), 0.0, 1.0)


def relaxed_mismatch(solution: SimulatedSolution, cfg: RelaxedPayoffConfig):
    """Estimate of int_0^T |alpha*(t) - mu(t, X)| dt per path."""
    cfg.check(solution.grid)
    gap = np.abs(alpha_star_steps(solution.B, solution.X, cfg.window) - mu_steps(solution.X))
    return gap @ solution.grid.steps


def relaxed_g(solution: SimulatedSolution, cfg: RelaxedPayoffConfig):
    """1 where the recovered control matches mu within eps in L1, else 0."""
    return (relaxed_mismatch(solution, cfg) < cfg.epsilon).astype(float)


def control_mismatch_steps(solution: SimulatedSolution):
    """|alpha_t - mu(t, X)| per Euler step for the solution's own control."""
    return np.abs(solution.actions[:, :, 0] - mu_steps(solution.X))


def E_k_indicator(solution: SimulatedSolution, k, cfg: RelaxedPayoffConfig, scaled=True):
    """1 where int_0^{t_k} |alpha_t - mu(t, X)| dt stays below the level tolerance.

    The tolerance is eps * t_k / T when ``scaled``, else eps itself.
    """
    grid = solution.grid
    require_tsirelson(grid)
    if not -grid.tsirelson_levels <= k <= -1:
        raise GridError(f'E_k needs k in -{grid.tsirelson_levels}..-1, got {k}')
    end = grid.coarse_index(k)
    integral = control_mismatch_steps(solution)[:, :end] @ grid.steps[:end]
    tolerance = cfg.epsilon * grid.coarse(k) / grid.horizon if scaled else cfg.epsilon
    return (integral < tolerance).astype(int)


def E_k_profile(solution: SimulatedSolution, cfg: RelaxedPayoffConfig, scaled=True):
    """Indicators for the whole family k = -K..-1, shape (n_paths, K)."""
    levels = range(-solution.grid.tsirelson_levels, 0)
    return np.stack([E_k_indicator(solution, k, cfg, scaled) for k in levels], axis=1)


def _step_actions(alpha_prefix, n_steps):
    values = alpha_prefix.values if isinstance(alpha_prefix, SamplePath) else np.asarray(alpha_prefix, float)
    if values.ndim == 3:
        values = values[:, :, 0]
    if values.ndim == 1:
        values = values[None, :]
    return values[:, :n_steps]


def extend_alpha_k(B: SamplePath, alpha_prefix, k):
    """Run the level recursion from t_k onward, keeping alpha_prefix on [0, t_k).

    alpha^k_t = theta((B_{t_i} - B_{t_{i-1}} + int_{t_{i-1}}^{t_i} alpha^k ds) / (t_i - t_{i-1}))
    on [t_i, t_{i+1}) for i = k..-1, and X^k = int alpha^k ds + B.
    Returns (alpha_k, X_k) as path batches.
    """
    grid = B.grid
    require_tsirelson(grid)
    K = grid.tsirelson_levels
    if not -K <= k <= -1:
        raise GridError(f'extend_alpha_k needs k in -{K}..-1, got {k}')
    start = grid.coarse_index(k)
    prefix = _step_actions(alpha_prefix, grid.n_steps)
    if prefix.shape[0] not in (1, B.n_paths):
        raise ValueError(f'prefix has {prefix.shape[0]} paths, B has {B.n_paths}')
    if prefix.shape[1] < start:
        raise ValueError(f'alpha prefix covers {prefix.shape[1]} steps, t_k needs {start}')
    head = prefix[:, :start]
    if np.any(head < 0) or np.any(head >= 1):
        raise ValueError('alpha prefix must take values in [0, 1)')

    steps = grid.steps
    brownian = B.scalar()
    alpha = np.zeros((B.n_paths, grid.n_steps))
    alpha[:, :start] = head
    for i in range(k, 0):
        lo_step, hi_step = grid.coarse_index(i), grid.coarse_index(i + 1)
        if i == -K:
            alpha[:, lo_step:hi_step] = 0.0
            continue
        prev = grid.coarse_index(i - 1)
        integral = alpha[:, prev:lo_step] @ steps[prev:lo_step]
        span = grid.fine_knots[lo_step] - grid.fine_knots[prev]
        level_value = theta((brownian[:, lo_step] - brownian[:, prev] + integral) / span)
        alpha[:, lo_step:hi_step] = level_value[:, None]

    drift = np.zeros((B.n_paths, grid.n_knots))
    np.cumsum(alpha * steps, axis=1, out=drift[:, 1:])
    alpha_path = np.concatenate([alpha, alpha[:, -1:]], axis=1)
    return SamplePath(grid, alpha_path[:, :, None]), SamplePath(grid, (drift + brownian)[:, :, None])


def recursion_error(alpha_k: SamplePath, X_k: SamplePath):
    """int_0^T |alpha^k_t - mu(t, X^k)| dt per path."""
    gap = np.abs(alpha_k.values[:, :-1, 0] - mu_steps(X_k))
    return gap @ X_k.grid.steps


def consistency_check_ank(B: SamplePath, alpha, n, k, eps):
    """Whether (alpha^n, X^n) and (alpha^k, X^k) coincide within eps, per path.

    Both recursions start from the same driving control; on the event E_k
    they must agree. Agreement means L1 distance of the controls and sup
    distance of the states both at most eps.
    """
    K = B.grid.tsirelson_levels
    if not -K <= n < k <= -1:
        raise GridError(f'consistency check needs -{K} <= n < k <= -1, got n={n}, k={k}')
    alpha_n, X_n = extend_alpha_k(B, alpha, n)
    alpha_k, X_k = extend_alpha_k(B, alpha, k)
    control_gap = np.abs(alpha_n.values[:, :-1, 0] - alpha_k.values[:, :-1, 0]) @ B.grid.steps
    state_gap = np.max(np.abs(X_n.scalar() - X_k.scalar()), axis=1)
    return (control_gap <= eps) & (state_gap <= eps)


def tsirelson_problem(grid: TimeGrid, cfg: RelaxedPayoffConfig):
    """b = a, sigma = 1, A = [0, 1], x0 = 0 and payoff 1_D (relaxed)."""
    require_tsirelson(grid)
    cfg.check(grid)

    def drift(t, view, a):
        return a

    def diffusion(t, view, a):
        return 1.0

    return ControlProblem(
        n=1, d=1, x0=0.0, horizon=grid.horizon,
        actions=ActionSet.interval(0.0, 1.0),
        drift=drift, diffusion=diffusion,
        payoff=lambda solution: relaxed_g(solution, cfg),
        label='tsirelson',
    )


def fractional_uniformity_samples(problem: ControlProblem, grid: TimeGrid, streams, k):
    """eta_k = theta of the coarse increment quotient of X under the mu-policy."""
    require_tsirelson(grid)
    if not -grid.tsirelson_levels + 1 <= k <= -1:
        raise GridError(f'uniformity level k must lie in -{grid.tsirelson_levels - 1}..-1, got {k}')
    ordered = sorted(as_stream_batch(streams), key=lambda stream: stream.stream_index)
    solution = simulate(problem, closed_loop_tsirelson_policy(), grid, ordered)
    return theta(solution.X.increment_quotient(grid.coarse(k - 1), grid.coarse(k))[:, 0])


def _b_quotient(t, B, shift=0):
    """Quotient of B over the coarse interval before t's level, or None on the first levels."""
    grid = B.grid
    k = grid.level_of(t)
    if k is None or k - shift <= -grid.tsirelson_levels:
        return None
    return B.increment_quotient(grid.coarse(k - shift - 1), grid.coarse(k - shift))[:, 0]


def _naive_mimic(t, B):
    q = _b_quotient(t, B, shift=0)
    return np.zeros(B.n_paths) if q is None else theta(q)


def _shifted_mimic(t, B):
    q = _b_quotient(t, B, shift=0)
    return np.zeros(B.n_paths) if q is None else theta(q + 0.5)


def _one_level_mimic(t, B):
    q = _b_quotient(t, B, shift=0)
    if q is None:
        return np.zeros(B.n_paths)
    previous = _b_quotient(t, B, shift=1)
    return theta(q) if previous is None else theta(q + theta(previous))


def open_loop_probe_family(grid: TimeGrid):
    """Open-loop probe: 11 constants, 5 deterministic schedules, 3 B-increment mimics.

    The mimics guess the state quotient from B alone; none of them runs the
    full level recursion from the stub, which on a truncated grid would
    reproduce the closed-loop control.
    """
    require_tsirelson(grid)
    T = grid.horizon
    members = [
        FamilyMember(f'constant a={a:.1f}', Policy.constant(a, label=f'constant a={a:.1f}'), {'a': a})
        for a in np.round(np.linspace(0.0, 1.0, 11), 10)
    ]
    schedules = [
        ('ramp-up', lambda t: t / T),
        ('ramp-down', lambda t: 1.0 - t / T),
        ('sine', lambda t: 0.5 * (1.0 + math.sin(2.0 * math.pi * t / T))),
        ('step-half', lambda t: 1.0 if t >= T / 2 else 0.0),
        ('sawtooth', lambda t: theta(4.0 * t / T)),
    ]
    members += [
        FamilyMember(name, Policy.deterministic(fn, label=name), {'schedule': name})
        for name, fn in schedules
    ]
    mimics = [
        ('mimic theta(dB/dt)', _naive_mimic),
        ('mimic theta(dB/dt + 1/2)', _shifted_mimic),
        ('mimic one-level correction', _one_level_mimic),
    ]
    members += [
        FamilyMember(name, Policy.open_loop(law, label=name), {'mimic': name})
        for name, law in mimics
    ]
    return PolicyFamily('open-loop-probe', tuple(members))


def closed_loop_family():
    policy = closed_loop_tsirelson_policy()
    return PolicyFamily('closed-loop-tsirelson', (FamilyMember(policy.label, policy, {}),))
