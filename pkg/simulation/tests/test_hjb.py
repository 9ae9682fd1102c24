import csv
import os
import tempfile

import numpy as np
from django.test import SimpleTestCase
from scipy import stats

from simulation.estimators import estimate_value
from simulation.exceptions import CflViolation
from simulation.hjb import (
    Boundary, HjbGrid, action_sample, extract_policy, hamiltonian, required_time_steps, solve,
)
from simulation.paths import make_uniform_grid
from simulation.sde import ActionSet, ControlProblem, Policy


def controlled(terminal, sigma=1.0, drift=True):
    return ControlProblem.state_dependent(
        lambda t, x, a: a + 0.0 * x if drift else 0.0 * (x + a),
        lambda t, x, a: np.full(np.broadcast(x, a).shape, sigma),
        terminal, x0=0.0, horizon=1.0, actions=ActionSet.interval(0.0, 1.0))


def digital(x):
    return (np.asarray(x) >= 1.0).astype(float)


class HamiltonianTestCase(SimpleTestCase):
    def setUp(self):
        self.problem = controlled(lambda x: x)

    def test_sup_over_actions(self):
        H, a = hamiltonian(0.0, 0.3, 2.0, 0.0, self.problem, ActionSet.interval(0.0, 1.0))
        self.assertEqual((H, a), (2.0, 1.0))
        H, a = hamiltonian(0.0, 0.3, -2.0, 0.0, self.problem, ActionSet.interval(0.0, 1.0))
        self.assertEqual((H, a), (0.0, 0.0))

    def test_diffusion_term(self):
        H, _ = hamiltonian(0.0, 0.0, 0.0, 4.0, controlled(lambda x: x, sigma=0.5), [0.0, 1.0])
        self.assertAlmostEqual(H, 0.5)

    def test_array_input(self):
        x = np.linspace(-1, 1, 5)
        H, a = hamiltonian(0.0, x, np.ones(5), np.zeros(5), self.problem, [0.0, 0.5, 1.0])
        np.testing.assert_array_equal(H, 1.0)
        np.testing.assert_array_equal(a, 1.0)

    def test_action_sample(self):
        np.testing.assert_allclose(action_sample(ActionSet.interval(0.0, 1.0), 5), [0, 0.25, 0.5, 0.75, 1])
        with self.assertRaises(ValueError):
            action_sample([])


class SolveTestCase(SimpleTestCase):
    def setUp(self):
        """Grid on [-4, 4] with dx = 1/32, so x = 1 is a node"""
        self.grid = HjbGrid(-4.0, 4.0, 257, 1200)
        self.actions = action_sample(ActionSet.interval(0.0, 1.0), 11)

    def test_linear_payoff(self):
        """g = x, b = a, sigma = 1: v(0, 0) = T with a* = 1"""
        solution = solve(controlled(lambda x: x), self.grid, self.actions)
        self.assertAlmostEqual(float(solution.value_at(0.0, 0.0)), 1.0, delta=1e-2)
        inner = np.abs(solution.x) <= 2.0
        np.testing.assert_array_equal(solution.policy[0, inner], 1.0)

    def test_decreasing_payoff(self):
        solution = solve(controlled(lambda x: -x), self.grid, self.actions)
        inner = np.abs(solution.x) <= 2.0
        np.testing.assert_array_equal(solution.policy[0, inner], 0.0)
        self.assertAlmostEqual(float(solution.value_at(0.0, 0.0)), 0.0, delta=1e-2)

    def test_digital_payoff(self):
        """P(1 + B_1 >= 1) = 1/2 under a = 1"""
        solution = solve(controlled(digital), self.grid, self.actions)
        self.assertAlmostEqual(float(solution.value_at(0.0, 0.0)), stats.norm.sf(0.0), delta=2e-2)
        self.assertGreaterEqual(solution.v.min(), 0.0)
        self.assertLessEqual(solution.v.max(), 1.0)

    def test_deterministic(self):
        solution = solve(controlled(lambda x: x, sigma=0.0), self.grid, self.actions)
        self.assertAlmostEqual(float(solution.value_at(0.0, 0.0)), 1.0, delta=self.grid.dx)

    def test_degenerate_keeps_terminal(self):
        solution = solve(controlled(digital, sigma=0.0, drift=False), self.grid, self.actions)
        np.testing.assert_array_equal(solution.v, np.broadcast_to(digital(solution.x), solution.v.shape))

    def test_neumann_boundary(self):
        grid = HjbGrid(-4.0, 4.0, 257, 1200, Boundary.NEUMANN)
        solution = solve(controlled(digital), grid, self.actions)
        self.assertEqual(solution.v[0, 0], solution.v[0, 1])
        self.assertAlmostEqual(float(solution.value_at(0.0, 0.0)), 0.5, delta=2e-2)

    def test_cfl_violation(self):
        problem = controlled(lambda x: x)
        required = required_time_steps(problem, self.grid, self.actions)
        self.assertGreater(required, 1)
        with self.assertRaises(CflViolation) as ctx:
            solve(problem, self.grid.with_time_steps(required - 1), self.actions)
        self.assertEqual(ctx.exception.required_n_t, required)
        solve(problem, self.grid.with_time_steps(required), self.actions)

    def test_x0_must_be_inside(self):
        with self.assertRaises(ValueError):
            solve(controlled(lambda x: x), HjbGrid(1.0, 5.0, 21, 100), self.actions)

    def test_needs_state_problem(self):
        problem = ControlProblem(
            n=1, d=1, x0=0.0, horizon=1.0, actions=ActionSet.interval(0.0, 1.0),
            drift=lambda t, view, a: a, diffusion=lambda t, view, a: 1.0, payoff=lambda s: s.X.terminal[:, 0])
        with self.assertRaises(ValueError):
            solve(problem, self.grid, self.actions)

    def test_grid_checks(self):
        with self.assertRaises(ValueError):
            HjbGrid(1.0, -1.0, 11, 10)
        with self.assertRaises(ValueError):
            HjbGrid(-1.0, 1.0, 2, 10)

    def test_csv_dump(self):
        solution = solve(controlled(digital), self.grid, self.actions)
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'hjb.csv')
            solution.to_csv(path, time_stride=600, space_stride=128)
            with open(path, newline='') as handle:
                rows = list(csv.reader(handle))
        self.assertEqual(rows[0], ['t', 'x', 'v', 'a_star'])
        # layers 0, 600, 1200 times nodes 0, 128, 256
        self.assertEqual(len(rows), 1 + 3 * 3)
        self.assertEqual(float(rows[-1][0]), 1.0)


class ExtractPolicyTestCase(SimpleTestCase):
    def test_feedback_value_matches_pde(self):
        problem = controlled(digital)
        solution = solve(problem, HjbGrid(-4.0, 4.0, 257, 1200), action_sample(problem.actions, 11))
        policy = extract_policy(solution)
        self.assertEqual(policy.label, 'hjb-feedback')
        estimate = estimate_value(problem, policy, make_uniform_grid(1.0, 100), 4000, 21)
        constant = estimate_value(problem, Policy.constant(1.0), make_uniform_grid(1.0, 100), 4000, 21)
        self.assertTrue(estimate.agrees_with(constant))
        self.assertAlmostEqual(estimate.mean, float(solution.value_at(0.0, 0.0)), delta=4 * estimate.stderr + 2e-2)
