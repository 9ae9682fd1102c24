"""Benchmark problems with known values, shared by the runners and config validation."""
import numpy as np

from simulation.girsanov import LambdaSpec
from simulation.paths import make_uniform_grid
from simulation.sde import ActionSet, ControlProblem, Policy, PolicyKind
from simulation.tsirelson import mu, theta


def linear(x):
    return np.asarray(x, dtype=float)


def decreasing(x):
    return -np.asarray(x, dtype=float)


def digital(x):
    """1{x >= 1}"""
    return (np.asarray(x, dtype=float) >= 1.0).astype(float)


def controlled_drift(terminal, sigma=1.0, horizon=1.0, x0=0.0, drift=True, label=''):
    """b = a (or 0), constant sigma, A = [0, 1], payoff terminal(X_T)."""

    def b(t, x, a):
        shape = np.broadcast(x, a).shape
        return np.broadcast_to(a, shape) + 0.0 if drift else np.zeros(shape)

    def s(t, x, a):
        return np.full(np.broadcast(x, a).shape, float(sigma))

    return ControlProblem.state_dependent(
        b, s, terminal, x0=x0, horizon=horizon, actions=ActionSet.interval(0.0, 1.0), label=label)


def hjb_problems(horizon):
    """Problems solved by hjb-benchmark, keyed by name."""
    return {
        'linear': controlled_drift(linear, 1.0, horizon, label='b=a sigma=1 g=x'),
        'digital': controlled_drift(digital, 1.0, horizon, label='b=a sigma=1 g=1{x>=1}'),
        'decreasing': controlled_drift(decreasing, 1.0, horizon, label='b=a sigma=1 g=-x'),
        'deterministic': controlled_drift(linear, 0.0, horizon, label='b=a sigma=0 g=x'),
        'degenerate': controlled_drift(digital, 0.0, horizon, drift=False, label='b=0 sigma=0 g=1{x>=1}'),
    }


def action_lambda(t, view, a):
    return a


def _terminal(solution):
    return solution.X.terminal[:, 0]


def girsanov_pairs(horizon):
    """(name, problem, lambda, closed-loop policy) for the reweighting battery.

    Five pairs use lambda = a on b = a, sigma = 1; the last uses a drift that
    does not read the action.
    """
    action_bound = LambdaSpec(action_lambda, 1.0)

    def problem(terminal, label):
        return controlled_drift(terminal, 1.0, horizon, label=label)

    def bang_bang(t, x):
        return (np.asarray(x)[:, 0] < 0).astype(float)

    def fractional(t, x):
        return theta(np.asarray(x)[:, 0])

    def smooth(t, view):
        return 0.5 * (1.0 + np.sin(view.current[:, 0]))

    def wave(t, view, a):
        return 0.5 * np.sin(t + view.current[:, :1])

    wave_problem = ControlProblem(
        n=1, d=1, x0=0.0, horizon=horizon, actions=ActionSet.interval(0.0, 1.0),
        drift=wave, diffusion=lambda t, view, a: 1.0,
        payoff=lambda solution: (solution.X.terminal[:, 0] >= 0.5).astype(float),
        label='b=0.5 sin(t+x) sigma=1',
    )
    return [
        ('constant a=1, g=x_T', problem(linear, 'g=x'), action_bound,
         Policy.constant(1.0, PolicyKind.CLOSED_LOOP)),
        ('constant a=1, g=1{x_T>=1}', problem(digital, 'g=1{x>=1}'), action_bound,
         Policy.constant(1.0, PolicyKind.CLOSED_LOOP)),
        ('bang-bang a=1{x<0}, g=x_T', problem(linear, 'g=x'), action_bound,
         Policy.feedback(bang_bang, label='a=1{x<0}')),
        ('a=theta(x), g=max(x_T, 0)', problem(lambda x: np.maximum(x, 0.0), 'g=max(x,0)'), action_bound,
         Policy.feedback(fractional, label='a=theta(x)')),
        ('a=(1+sin x)/2, g=x_T^2', problem(lambda x: np.asarray(x) ** 2, 'g=x^2'), action_bound,
         Policy.closed_loop(smooth, label='a=(1+sin x)/2')),
        ('lambda=sin(t+x)/2, g=1{x_T>=1/2}', wave_problem, LambdaSpec(wave, 0.5),
         Policy.constant(0.0, PolicyKind.CLOSED_LOOP)),
    ]


def recovery_cases(tsirelson_grid, horizon, n_steps):
    """(name, problem, policy, grid) for the recover -> re-simulate round trip."""
    uniform = make_uniform_grid(horizon, n_steps)

    def tsirelson_drift(t, view, a):
        return mu(t, view)[:, None]

    tsirelson = ControlProblem(
        n=1, d=1, x0=0.0, horizon=horizon, actions=ActionSet.interval(0.0, 1.0),
        drift=tsirelson_drift, diffusion=lambda t, view, a: 1.0, payoff=_terminal,
        label='b=mu(t,X) sigma=1',
    )
    scaled = ControlProblem(
        n=1, d=1, x0=0.0, horizon=horizon, actions=ActionSet.interval(0.0, 1.0),
        drift=lambda t, view, a: a, diffusion=lambda t, view, a: 2.0, payoff=_terminal,
        label='b=a sigma=2',
    )
    return [
        ('b=0, sigma=1', controlled_drift(linear, 1.0, horizon, drift=False, label='b=0 sigma=1'),
         Policy.constant(0.0), uniform),
        ('b=mu(t,X), sigma=1', tsirelson, Policy.constant(0.0), tsirelson_grid),
        ('b=a, sigma=2', scaled,
         Policy.feedback(lambda t, x: (np.asarray(x)[:, 0] < 0).astype(float), label='a=1{x<0}'), uniform),
    ]
