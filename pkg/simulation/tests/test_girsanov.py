import math

import numpy as np
from django.test import SimpleTestCase

from simulation.estimators import estimate_value
from simulation.exceptions import NumericalAbort, PolicyError
from simulation.girsanov import (
    GirsanovWeight, LambdaSpec, closed_loop_rewrite, estimate_quadratic_variation, inverse_weight,
    open_loop_rewrite, piecewise_constant_projection, projection_l2_gap, recover_brownian, reweighted_value,
    stochastic_exponential,
)
from simulation.paths import RngStream, SamplePath, make_tsirelson_grid, make_uniform_grid, sample_brownian
from simulation.sde import ActionSet, ControlProblem, Policy, PolicyKind, simulate
from simulation.tsirelson import RelaxedPayoffConfig, closed_loop_tsirelson_policy, tsirelson_problem


def action_lambda(t, view, a):
    return a


def drift_problem(terminal, sigma=1.0):
    return ControlProblem.state_dependent(
        lambda t, x, a: a + 0.0 * x, lambda t, x, a: np.full(np.broadcast(x, a).shape, sigma), terminal,
        x0=0.0, horizon=1.0, actions=ActionSet.interval(0.0, 1.0))


class StochasticExponentialTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = make_uniform_grid(1.0, 20)
        self.brownian = sample_brownian(self.grid, RngStream.batch(1, 20000))

    def test_constant_lambda(self):
        """N_T = exp(c B_T - c^2 T / 2) for constant lambda = c"""
        weight = stochastic_exponential(np.full(self.grid.n_steps, 0.7), self.brownian)
        expected = 0.7 * self.brownian.terminal[:, 0] - 0.5 * 0.49
        np.testing.assert_allclose(weight.log_weight, expected, atol=1e-12)
        np.testing.assert_allclose(weight.quadratic_part, 0.49)

    def test_weight_has_mean_one(self):
        weight = stochastic_exponential(np.full(self.grid.n_steps, 0.7), self.brownian).weight
        self.assertLess(abs(weight.mean() - 1.0), 4 * weight.std() / math.sqrt(len(weight)))

    def test_overflow_mask(self):
        weight = GirsanovWeight.from_parts(np.array([0.0, 50.0]), np.array([0.0, 0.0]))
        np.testing.assert_array_equal(weight.overflow(30.0), [False, True])


class LambdaSpecTestCase(SimpleTestCase):
    def test_bound_is_enforced(self):
        grid = make_uniform_grid(1.0, 5)
        problem = drift_problem(lambda x: x)
        solution = simulate(problem, Policy.constant(1.0, PolicyKind.CLOSED_LOOP), grid, RngStream.batch(2, 5))
        with self.assertRaises(NumericalAbort):
            inverse_weight(LambdaSpec(lambda t, view, a: 2 * a, 1.0), solution)

    def test_bound_must_be_positive(self):
        with self.assertRaises(ValueError):
            LambdaSpec(action_lambda, 0.0)


class ReweightingTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = make_uniform_grid(1.0, 20)
        self.lam = LambdaSpec(action_lambda, 1.0)

    def test_reweighted_matches_direct(self):
        """E[N g(X^0)] under P^0 equals the drifted value"""
        problem = drift_problem(lambda x: x)
        policy = Policy.feedback(lambda t, x: (x[:, 0] < 0).astype(float))
        reweighted = reweighted_value(problem, self.lam, policy, self.grid, 20000, 31)
        direct = estimate_value(problem, policy, self.grid, 20000, 32)
        self.assertTrue(reweighted.weighted.agrees_with(direct))
        self.assertTrue(reweighted.ratio.agrees_with(direct))
        self.assertGreater(reweighted.effective_sample_size, 1000)
        self.assertEqual(reweighted.overflow_paths, 0)

    def test_constant_drift(self):
        """a = 1, g = x: value T"""
        problem = drift_problem(lambda x: x)
        reweighted = reweighted_value(problem, self.lam, Policy.constant(1.0, PolicyKind.CLOSED_LOOP),
                                      self.grid, 20000, 5, threads=2, chunk_size=4096)
        self.assertLess(abs(reweighted.weighted.mean - 1.0), 4 * reweighted.weighted.stderr)

    def test_open_loop_policy_is_refused(self):
        with self.assertRaises(PolicyError):
            reweighted_value(drift_problem(lambda x: x), self.lam, Policy.constant(1.0), self.grid, 10, 1)

    def test_inverse_weight_undoes_drift(self):
        """Under M_T dP the drifted state is a Brownian motion"""
        problem = drift_problem(lambda x: x)
        solution = simulate(problem, Policy.constant(1.0), self.grid, RngStream.batch(8, 20000))
        weight = inverse_weight(self.lam, solution).weight
        samples = weight * solution.X.terminal[:, 0]
        self.assertLess(abs(samples.mean()), 4 * samples.std() / math.sqrt(len(samples)))

    def test_records(self):
        problem = drift_problem(lambda x: x)
        reweighted = reweighted_value(problem, self.lam, Policy.constant(0.5, PolicyKind.CLOSED_LOOP),
                                      self.grid, 100, 5)
        records = reweighted.to_records('girsanov-check', 'half')
        self.assertEqual([r['member'] for r in records], ['half [weighted]', 'half [self-normalised]'])


class ProjectionTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = make_tsirelson_grid(1.0, 6, 0.5, 4)
        self.problem = tsirelson_problem(self.grid, RelaxedPayoffConfig.default(self.grid))
        self.policy = closed_loop_tsirelson_policy()

    def test_projection_holds_action(self):
        grid = make_uniform_grid(1.0, 8)
        problem = drift_problem(lambda x: x)
        policy = Policy.closed_loop(lambda t, view: np.full(view.n_paths, t), label='a=t')
        projected = piecewise_constant_projection(policy, grid.fine_knots[::4])
        solution = simulate(problem, projected, grid, RngStream.batch(1, 3))
        np.testing.assert_allclose(solution.actions[0, :, 0], [0, 0, 0, 0, 0.5, 0.5, 0.5, 0.5])
        self.assertEqual(projected.kind, PolicyKind.CLOSED_LOOP)

    def test_projection_adds_time_zero(self):
        policy = Policy.constant(0.5, PolicyKind.CLOSED_LOOP)
        projected = piecewise_constant_projection(policy, [0.5])
        self.assertEqual(projected.params['n_knots'], 2)
        with self.assertRaises(ValueError):
            piecewise_constant_projection(policy, [0.5, 0.25])
        with self.assertRaises(PolicyError):
            piecewise_constant_projection(Policy.augmented(lambda t, s: 0.0), [0.0])

    def test_gap_vanishes_on_the_full_grid(self):
        rows = projection_l2_gap(self.problem, LambdaSpec(action_lambda, 1.0), self.policy, self.grid,
                                 [1], 50, 3)
        self.assertEqual(rows[0][0], 1)
        self.assertLess(rows[0][1], 1e-20)

    def test_gap_shrinks(self):
        strides = [16, 8, 4]
        rows = projection_l2_gap(self.problem, LambdaSpec(action_lambda, 1.0), self.policy, self.grid,
                                 strides, 400, 3)
        self.assertEqual([row[0] for row in rows], strides)
        self.assertLess(rows[-1][1], rows[0][1])


class RecoveryTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = make_uniform_grid(1.0, 50)
        self.streams = RngStream.batch(17, 30)

    def test_recover_and_resimulate(self):
        problem = drift_problem(lambda x: x, sigma=2.0)
        policy = Policy.feedback(lambda t, x: (x[:, 0] < 0).astype(float))
        solution = simulate(problem, policy, self.grid, self.streams)
        recovered = recover_brownian(problem, solution.X, solution.alpha)
        np.testing.assert_allclose(recovered.values, solution.B.values, atol=1e-10)
        replay = simulate(problem, policy, self.grid, brownian=recovered)
        np.testing.assert_allclose(replay.X.values, solution.X.values, atol=1e-10)

    def test_singular_diffusion_aborts(self):
        problem = drift_problem(lambda x: x, sigma=0.0)
        solution = simulate(problem, Policy.constant(0.5), self.grid, self.streams)
        with self.assertRaises(NumericalAbort):
            recover_brownian(problem, solution.X, solution.alpha)

    def test_quadratic_variation(self):
        grid = make_uniform_grid(1.0, 2000)
        brownian = sample_brownian(grid, self.streams)
        X = SamplePath(grid, 2.0 * brownian.values)
        estimate = estimate_quadratic_variation(X, 200)
        self.assertEqual(estimate.values.shape, (30, 2001, 1))
        band = 5 * math.sqrt(2 / 200) * 4.0
        self.assertLess(np.max(np.abs(estimate.values[:, -1, 0] - 4.0)), band)
        np.testing.assert_array_equal(estimate.values[:, 0], estimate.values[:, 1])
        with self.assertRaises(ValueError):
            estimate_quadratic_variation(X, 0)

    def test_rewrites_preserve_paths(self):
        problem = drift_problem(lambda x: x)
        open_policy = Policy.open_loop(lambda t, B: (B.current[:, 0] > 0).astype(float), label='sign')
        direct = simulate(problem, open_policy, self.grid, self.streams)
        via_x = simulate(problem, closed_loop_rewrite(open_policy, problem), self.grid, brownian=direct.B)
        np.testing.assert_allclose(via_x.X.values, direct.X.values, atol=1e-10)

        closed_policy = Policy.feedback(lambda t, x: (x[:, 0] < 0).astype(float), label='below')
        closed = simulate(problem, closed_policy, self.grid, self.streams)
        via_b = simulate(problem, open_loop_rewrite(closed_policy, problem), self.grid, brownian=closed.B)
        np.testing.assert_allclose(via_b.X.values, closed.X.values, atol=1e-12)

    def test_rewrite_kinds(self):
        problem = drift_problem(lambda x: x)
        with self.assertRaises(PolicyError):
            closed_loop_rewrite(Policy.constant(0.0, PolicyKind.CLOSED_LOOP), problem)
        with self.assertRaises(PolicyError):
            open_loop_rewrite(Policy.constant(0.0), problem)
