"""Change of measure between drifted and driftless dynamics.

For b = sigma * lambda with bounded lambda, expectations under the drifted
law are driftless expectations weighted by

    N_T = exp(int lambda dB^0 - 1/2 int |lambda|^2 ds),

and M_T = exp(-int lambda dB - 1/2 int |lambda|^2 ds) weights the other way.
Stochastic integrals are left-point (Ito) sums over the fine grid.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .estimators import DEFAULT_CHUNK_SIZE, ValueEstimate, run_chunked
from .exceptions import NumericalAbort, PolicyError
from .paths import PathView, RngStream, SamplePath, sample_brownian
from .sde import (
    Policy, PolicyKind, SimulatedSolution, conform, euler_increment, payoff, resolve_action, simulate,
)

logger = logging.getLogger(__name__)

DEFAULT_LOG_WEIGHT_CAP = 30.0


@dataclass(frozen=True, eq=False)
class GirsanovWeight:
    """Per-path log N_T split into its Ito part and its quadratic part."""

    log_weight: np.ndarray
    ito_integral_part: np.ndarray
    quadratic_part: np.ndarray

    @classmethod
    def from_parts(cls, ito_integral_part, quadratic_part):
        ito = np.asarray(ito_integral_part, dtype=float)
        quad = np.asarray(quadratic_part, dtype=float)
        return cls(ito - 0.5 * quad, ito, quad)

    @property
    def weight(self):
        return np.exp(self.log_weight)

    def overflow(self, cap=DEFAULT_LOG_WEIGHT_CAP):
        """Mask of paths whose log-weight exceeds ``cap``."""
        return self.log_weight > cap


@dataclass(frozen=True)
class LambdaSpec:
    """lambda(t, X-view, a) with b = sigma * lambda and |lambda| <= bound."""

    fn: Callable = field(repr=False)
    bound: float

    def __post_init__(self):
        if not self.bound > 0:
            raise ValueError(f'lambda bound must be positive, got {self.bound}')

    def __call__(self, t, view, actions, d, step=None):
        values = conform(self.fn(t, view, actions), (view.n_paths, d), 'lambda', step)
        norms = np.linalg.norm(values, axis=1)
        over = ~(norms <= self.bound * (1 + 1e-12))
        if np.any(over):
            raise NumericalAbort(f'lambda exceeds its bound {self.bound:g}', step=step,
                                 path=int(np.argmax(over)))
        return values


def lambda_along(lam: LambdaSpec, solution: SimulatedSolution, d):
    """lambda at the left knot of every step of ``solution``, shape (n_paths, n_steps, d)."""
    grid = solution.grid
    out = np.empty((solution.n_paths, grid.n_steps, d))
    actions = solution.actions
    for j in range(grid.n_steps):
        out[:, j] = lam(grid.fine_knots[j], solution.X.truncated(j), actions[:, j], d, step=j)
    return out


def _as_step_array(values, n_paths, n_steps, d):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[None, :, None]
    elif values.ndim == 2:
        values = values[None] if values.shape == (n_steps, d) else values[:, :, None]
    return np.broadcast_to(values, (n_paths, n_steps, d))


def stochastic_exponential(lambda_values, brownian: SamplePath, grid=None) -> GirsanovWeight:
    """exp(sum lambda_j . dB_j - 1/2 sum |lambda_j|^2 dt_j) per path."""
    grid = grid or brownian.grid
    dB = brownian.increments()
    lam = _as_step_array(lambda_values, brownian.n_paths, grid.n_steps, brownian.dim)
    ito_steps = np.einsum('psd,psd->ps', lam, dB)
    quad_steps = np.einsum('psd,psd->ps', lam, lam) * grid.steps
    log_steps = np.cumsum(ito_steps - 0.5 * quad_steps, axis=1)
    bad = ~np.isfinite(log_steps)
    if np.any(bad):
        path = int(np.argmax(bad.any(axis=1)))
        raise NumericalAbort('log-weight is not finite', step=int(np.argmax(bad[path])), path=path)
    return GirsanovWeight.from_parts(ito_steps.sum(axis=1), quad_steps.sum(axis=1))


def inverse_weight(lam: LambdaSpec, solution: SimulatedSolution, d=None) -> GirsanovWeight:
    """M_T = exp(-int lambda dB - 1/2 int |lambda|^2 ds) along a drifted solution."""
    d = d or solution.B.dim
    values = lambda_along(lam, solution, d)
    forward = stochastic_exponential(-values, solution.B, solution.grid)
    return GirsanovWeight.from_parts(forward.ito_integral_part, forward.quadratic_part)


def _require_state_policy(policy):
    if policy.kind not in (PolicyKind.CLOSED_LOOP, PolicyKind.FEEDBACK):
        raise PolicyError(f'reweighting needs a policy of X only, got {policy.kind.value}')


def _drifted_brownian(solution0, lam_values):
    """B = B^0 - int lambda ds, the driving noise of the drifted law under N_T dP^0."""
    drift = np.zeros_like(solution0.B.values)
    np.cumsum(lam_values * solution0.grid.steps[None, :, None], axis=1, out=drift[:, 1:])
    return SamplePath(solution0.grid, solution0.B.values - drift)


@dataclass(frozen=True)
class ReweightedEstimate:
    """Weighted mean E[N g] next to the self-normalised ratio sum(N g) / sum(N)."""

    weighted: ValueEstimate
    ratio: ValueEstimate
    effective_sample_size: float
    mean_weight: float
    overflow_paths: int

    def to_records(self, experiment, member):
        extra = {'effective_sample_size': self.effective_sample_size, 'mean_weight': self.mean_weight}
        return [
            self.weighted.to_record(experiment, f'{member} [weighted]', **extra),
            self.ratio.to_record(experiment, f'{member} [self-normalised]', **extra),
        ]


def reweighted_value(problem, lam: LambdaSpec, closed_policy: Policy, grid, n_paths, master_seed, *,
                     log_weight_cap=DEFAULT_LOG_WEIGHT_CAP, threads=1,
                     chunk_size=DEFAULT_CHUNK_SIZE) -> ReweightedEstimate:
    """Value of ``closed_policy`` from driftless paths and Girsanov weights.

    The policy is evaluated on the driftless state X^0. Paths whose log-weight
    passes ``log_weight_cap`` are kept but counted.
    """
    _require_state_policy(closed_policy)
    if n_paths < 2:
        raise ValueError(f'n_paths must be at least 2, got {n_paths}')
    driftless = problem.driftless()

    def chunk(streams):
        solution0 = simulate(driftless, closed_policy, grid, streams)
        lam_values = lambda_along(lam, solution0, problem.d)
        weight = stochastic_exponential(lam_values, solution0.B, grid)
        weak = SimulatedSolution(grid, _drifted_brownian(solution0, lam_values), solution0.X,
                                 solution0.alpha, solution0.Gamma, solution0.clamp_violations)
        return payoff(problem, weak), weight.log_weight

    g, log_w = run_chunked(chunk, master_seed, n_paths, threads, chunk_size)
    w = np.exp(log_w)
    if not np.all(np.isfinite(w)):
        raise NumericalAbort('Girsanov weight overflowed', path=int(np.argmax(~np.isfinite(w))))
    overflow = int(np.count_nonzero(log_w > log_weight_cap))
    ess = float(w.sum() ** 2 / np.sum(w ** 2))
    flags = {'weight_overflow': overflow, 'effective_sample_size': round(ess, 6)}

    y = w * g
    weighted = ValueEstimate.from_samples(y, master_seed, flags)
    mean_w = float(np.mean(w))
    ratio_mean = float(y.sum() / w.sum())
    ratio_stderr = float(np.std(y - ratio_mean * w, ddof=1) / (math.sqrt(n_paths) * mean_w))
    ratio = ValueEstimate.from_moments(ratio_mean, ratio_stderr, n_paths, master_seed, flags)
    if overflow:
        logger.warning('%d of %d paths passed the log-weight cap %g', overflow, n_paths, log_weight_cap)
    return ReweightedEstimate(weighted, ratio, ess, mean_w, overflow)


def piecewise_constant_projection(policy: Policy, knots) -> Policy:
    """Freeze the policy's action at each knot t_i and hold it on [t_i, t_{i+1}).

    Knot 0 is added when missing so the projection is defined from the start.
    """
    knots = [float(t) for t in knots]
    if not knots:
        raise ValueError('projection needs at least one knot')
    if any(lo >= hi for lo, hi in zip(knots[:-1], knots[1:])):
        raise ValueError('projection knots must strictly increase')
    if knots[0] > 0:
        knots.insert(0, 0.0)
    if policy.kind is PolicyKind.AUGMENTED:
        raise PolicyError('augmented policies cannot be projected')
    frozen = np.array(knots)

    def law(t, view):
        anchor = frozen[np.searchsorted(frozen, t + view.grid.knot_tolerance(t), side='right') - 1]
        view.grid.knot_index(anchor)
        past = view.until(anchor)
        if policy.kind is PolicyKind.FEEDBACK:
            return policy.law(anchor, past.current)
        return policy.law(anchor, past)

    kind = PolicyKind.OPEN_LOOP if policy.kind is PolicyKind.OPEN_LOOP else PolicyKind.CLOSED_LOOP
    label = f'{policy.label or policy.kind.value} | {len(knots)} knots'
    return Policy(kind, law, label, {**policy.params, 'n_knots': len(knots)})


def projection_l2_gap(problem, lam: LambdaSpec, policy: Policy, grid, strides, n_paths, master_seed):
    """E^0[|N^{alpha^n}_T - N^alpha_T|^2] for projections on every ``stride``-th fine knot.

    Returns one (stride, mean, stderr) tuple per stride, all on one driftless sample.
    """
    _require_state_policy(policy)
    driftless = problem.driftless()
    brownian = sample_brownian(grid, RngStream.batch(master_seed, n_paths), problem.d)

    def weight_of(p):
        solution0 = simulate(driftless, p, grid, brownian=brownian)
        return stochastic_exponential(lambda_along(lam, solution0, problem.d), brownian, grid).weight

    base = weight_of(policy)
    rows = []
    for stride in strides:
        knots = grid.fine_knots[::stride]
        squared = (weight_of(piecewise_constant_projection(policy, knots)) - base) ** 2
        rows.append((stride, float(np.mean(squared)), float(np.std(squared, ddof=1) / math.sqrt(n_paths))))
    return rows


def _inverse_diffusion_step(problem, t, view, actions, increment, step):
    n_paths = view.n_paths
    b = conform(problem.drift(t, view, actions), (n_paths, problem.n), 'drift', step)
    s = conform(problem.diffusion(t, view, actions), (n_paths, problem.n, problem.d), 'diffusion', step)
    rhs = increment - b * view.grid.steps[step]
    det = np.linalg.det(s)
    singular = ~(np.abs(det) > 0)
    if np.any(singular):
        raise NumericalAbort('sigma is singular', step=step, path=int(np.argmax(singular)))
    return np.linalg.solve(s, rhs[:, :, None])[:, :, 0]


def recover_brownian(problem, X: SamplePath, alpha=None) -> SamplePath:
    """Invert the Euler recursion: dB_j = sigma^{-1}(dX_j - b dt_j).

    ``alpha`` supplies the actions a drift or diffusion may read; without it
    the action set's reference point is used.
    """
    if problem.n != problem.d:
        raise ValueError(f'recovery needs n = d, got n={problem.n}, d={problem.d}')
    grid = X.grid
    if alpha is None:
        actions = np.broadcast_to(problem.actions.reference(), (X.n_paths, grid.n_steps, problem.actions.dim))
    else:
        actions = alpha.values[:, :-1] if isinstance(alpha, SamplePath) else np.asarray(alpha)
    dX = X.increments()
    B = np.zeros((X.n_paths, grid.n_knots, problem.d))
    for j in range(grid.n_steps):
        dB = _inverse_diffusion_step(problem, grid.fine_knots[j], X.truncated(j), actions[:, j], dX[:, j], j)
        B[:, j + 1] = B[:, j] + dB
    return SamplePath(grid, B)


def estimate_quadratic_variation(X: SamplePath, window) -> SamplePath:
    """Trailing realized variance sum(dX dX^T) / sum(dt) over ``window`` steps.

    Knot j >= 1 uses steps max(0, j - window)..j - 1; knot 0 repeats knot 1.
    Values are flattened n x n matrices.
    """
    if int(window) != window or window < 1:
        raise ValueError(f'window must be a positive integer, got {window}')
    window = int(window)
    grid = X.grid
    dX = X.increments()
    outer = np.einsum('psi,psj->psij', dX, dX)
    csum = np.zeros((X.n_paths, grid.n_knots) + outer.shape[2:])
    np.cumsum(outer, axis=1, out=csum[:, 1:])
    time = grid.fine_knots
    ends = np.arange(1, grid.n_knots)
    starts = np.maximum(ends - window, 0)
    realized = (csum[:, ends] - csum[:, starts]) / (time[ends] - time[starts])[None, :, None, None]
    realized = 0.5 * (realized + np.swapaxes(realized, 2, 3))
    values = np.concatenate([realized[:, :1], realized], axis=1)
    return SamplePath(grid, values.reshape(X.n_paths, grid.n_knots, -1))


def closed_loop_rewrite(open_policy: Policy, problem) -> Policy:
    """An X-reading policy with the same actions: recover B from X, then apply the open-loop law."""
    if open_policy.kind is not PolicyKind.OPEN_LOOP:
        raise PolicyError(f'closed_loop_rewrite needs an open-loop policy, got {open_policy.kind.value}')
    if problem.n != problem.d:
        raise ValueError('closed-loop rewriting needs n = d')

    def law(t, X_view):
        grid, index = X_view.grid, X_view.index
        values = X_view.values
        B = np.zeros((X_view.n_paths, grid.n_knots, problem.d))
        for j in range(index):
            B_view = PathView(B, grid, j)
            actions, _ = resolve_action(problem, open_policy, grid.fine_knots[j], B_view,
                                        X_view.until(grid.fine_knots[j]), None, j)
            dX = values[:, j + 1] - values[:, j]
            B[:, j + 1] = B[:, j] + _inverse_diffusion_step(
                problem, grid.fine_knots[j], X_view.until(grid.fine_knots[j]), actions, dX, j)
        return open_policy.law(t, PathView(B, grid, index))

    return Policy.closed_loop(law, label=f'{open_policy.label or "open-loop"} (via X)', **open_policy.params)


def open_loop_rewrite(closed_policy: Policy, problem) -> Policy:
    """A B-reading policy with the same actions: rerun the Euler recursion on B, then apply the law."""
    if closed_policy.kind not in (PolicyKind.CLOSED_LOOP, PolicyKind.FEEDBACK):
        raise PolicyError(f'open_loop_rewrite needs a policy of X, got {closed_policy.kind.value}')

    def law(t, B_view):
        grid, index = B_view.grid, B_view.index
        dB = np.diff(B_view.values, axis=1)
        X = np.empty((B_view.n_paths, grid.n_knots, problem.n))
        X[:, 0] = problem.x0
        for j in range(index):
            X_view = PathView(X, grid, j)
            actions, _ = resolve_action(problem, closed_policy, grid.fine_knots[j], None, X_view, None, j)
            X[:, j + 1] = X[:, j] + euler_increment(
                problem, grid.fine_knots[j], X_view, actions, grid.steps[j], dB[:, j], j)
        return closed_policy.act(t, None, PathView(X, grid, index), None)

    return Policy.open_loop(law, label=f'{closed_policy.label or "closed-loop"} (via B)', **closed_policy.params)
