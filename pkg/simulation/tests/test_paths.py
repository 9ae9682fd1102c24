import numpy as np
from django.test import SimpleTestCase

from simulation.exceptions import GridError, LookaheadError
from simulation.paths import (
    MAX_SEED, RngStream, SamplePath, increment_quotient, make_tsirelson_grid, make_uniform_grid, sample_brownian,
)


class TsirelsonGridTestCase(SimpleTestCase):
    def setUp(self):
        """Default grid: T=1, K=20, r=1/2, m=4"""
        self.grid = make_tsirelson_grid(1.0, 20, 0.5, 4)

    def test_coarse_knots(self):
        """t_k = T r^{-k} for k = -K..0"""
        self.assertEqual(len(self.grid.coarse_knots), 21)
        self.assertEqual(self.grid.coarse(0), 1.0)
        self.assertEqual(self.grid.coarse(-1), 0.5)
        self.assertAlmostEqual(self.grid.coarse(-20), 2.0 ** -20)

    def test_step_count(self):
        """m steps per level plus an 8-step stub"""
        self.assertEqual(self.grid.n_steps, 88)
        self.assertEqual(self.grid.coarse_index(-20), 8)
        self.assertEqual(self.grid.coarse_index(-19), 12)
        self.assertEqual(self.grid.coarse_index(0), 88)

    def test_every_coarse_knot_is_fine(self):
        for k in range(-20, 1):
            index = self.grid.knot_index(self.grid.coarse(k))
            self.assertEqual(self.grid.fine_knots[index], self.grid.coarse(k))

    def test_euler_step_fits_smallest_level(self):
        self.assertLessEqual(self.grid.euler_step, self.grid.coarse(-19) - self.grid.coarse(-20))
        self.assertAlmostEqual(self.grid.euler_step, float(np.min(self.grid.steps)))

    def test_level_of(self):
        self.assertIsNone(self.grid.level_of(0.0))
        self.assertEqual(self.grid.level_of(0.5), -1)
        self.assertEqual(self.grid.level_of(0.75), -1)
        self.assertEqual(self.grid.level_of(0.3), -2)
        with self.assertRaises(GridError):
            self.grid.level_of(1.0)

    def test_invalid_parameters(self):
        """K >= 2, 0 < r < 1, T > 0, m >= 1"""
        for args in [(1.0, 1, 0.5, 4), (1.0, 20, 1.0, 4), (1.0, 20, 0.0, 4), (0.0, 20, 0.5, 4), (1.0, 20, 0.5, 0)]:
            with self.assertRaises(GridError):
                make_tsirelson_grid(*args)

    def test_level_out_of_range(self):
        with self.assertRaises(GridError):
            self.grid.coarse(-21)
        with self.assertRaises(GridError):
            self.grid.coarse(1)

    def test_knots_are_read_only(self):
        with self.assertRaises(ValueError):
            self.grid.fine_knots[0] = 1.0


class DeepTsirelsonGridTestCase(SimpleTestCase):
    def setUp(self):
        """K=40: the smallest Euler steps are around 1e-13"""
        self.grid = make_tsirelson_grid(1.0, 40, 0.5, 4)

    def test_tolerance_stays_below_half_a_step(self):
        self.assertLess(self.grid.euler_step, 1e-12)
        tolerances = self.grid.knot_tolerance(self.grid.fine_knots[:-1])
        self.assertTrue(np.all(2 * tolerances < self.grid.steps))

    def test_every_knot_maps_to_itself(self):
        for i, t in enumerate(self.grid.fine_knots):
            self.assertEqual(self.grid.knot_index(t), i)
            self.assertEqual(self.grid.index_at_or_before(t), i)
        np.testing.assert_array_equal(
            self.grid.indices_at_or_before(self.grid.fine_knots), np.arange(self.grid.n_knots))

    def test_level_of_matches_step_levels(self):
        for t, position in zip(self.grid.fine_knots[:-1], self.grid.step_levels()):
            expected = None if position < 0 else int(position) - 40
            self.assertEqual(self.grid.level_of(t), expected)
        for k in range(-40, 0):
            self.assertEqual(self.grid.level_of(self.grid.coarse(k)), k)

    def test_view_reads_up_to_its_own_time(self):
        path = sample_brownian(self.grid, RngStream(5, 0))
        index = self.grid.coarse_index(-39)
        view = path.truncated(index)
        np.testing.assert_array_equal(
            view.increment_quotient(self.grid.coarse(-40), self.grid.coarse(-39)),
            path.increment_quotient(self.grid.coarse(-40), self.grid.coarse(-39)))
        with self.assertRaises(LookaheadError):
            view.value_at(self.grid.fine_knots[index + 1])


class UniformGridTestCase(SimpleTestCase):
    def test_uniform_grid(self):
        grid = make_uniform_grid(2.0, 50)
        self.assertEqual(grid.n_steps, 50)
        self.assertFalse(grid.is_tsirelson)
        self.assertAlmostEqual(grid.euler_step, 0.04)
        self.assertEqual(grid.fine_knots[-1], 2.0)

    def test_rejects_bad_step_count(self):
        with self.assertRaises(GridError):
            make_uniform_grid(1.0, 0)


class RngStreamTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = make_uniform_grid(1.0, 100)

    def test_same_stream_same_path(self):
        """Replay identity: (master_seed, index) fixes the path"""
        first = sample_brownian(self.grid, RngStream(7, 3))
        second = sample_brownian(self.grid, RngStream(7, 3))
        np.testing.assert_array_equal(first.values, second.values)

    def test_batch_is_prefix_stable(self):
        """Path i does not depend on how many paths are drawn"""
        small = sample_brownian(self.grid, RngStream.batch(11, 3))
        large = sample_brownian(self.grid, RngStream.batch(11, 10))
        np.testing.assert_array_equal(small.values, large.values[:3])

    def test_distinct_streams_differ(self):
        paths = sample_brownian(self.grid, RngStream.batch(11, 2))
        self.assertFalse(np.array_equal(paths.values[0], paths.values[1]))

    def test_seed_range(self):
        RngStream(MAX_SEED, 0).generator()
        with self.assertRaises(ValueError):
            RngStream(MAX_SEED + 1, 0)
        with self.assertRaises(ValueError):
            RngStream(-1, 0)

    def test_brownian_moments(self):
        """B_T ~ N(0, T)"""
        paths = sample_brownian(self.grid, RngStream.batch(5, 4000))
        terminal = paths.terminal[:, 0]
        self.assertLess(abs(terminal.mean()), 4 / np.sqrt(4000))
        self.assertLess(abs(terminal.var() - 1.0), 0.1)
        np.testing.assert_array_equal(paths.values[:, 0], 0.0)


class SamplePathTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = make_uniform_grid(1.0, 4)
        self.path = SamplePath.single(self.grid, [0.0, 1.0, 3.0, 3.0, 5.0])

    def test_increment_quotient(self):
        self.assertEqual(increment_quotient(self.path, 0.25, 0.5)[0, 0], 8.0)
        self.assertEqual(self.path.increment_quotient(0.0, 1.0)[0, 0], 5.0)
        with self.assertRaises(GridError):
            self.path.increment_quotient(0.5, 0.25)
        with self.assertRaises(GridError):
            self.path.increment_quotient(0.1, 0.5)

    def test_view_blocks_lookahead(self):
        view = self.path.truncated(2)
        self.assertEqual(view.current[0, 0], 3.0)
        self.assertEqual(view.increment_quotient(0.0, 0.5)[0, 0], 6.0)
        with self.assertRaises(LookaheadError):
            view.knot_value(3)
        with self.assertRaises(LookaheadError):
            view.increment_quotient(0.25, 0.75)
        with self.assertRaises(LookaheadError):
            view.until(0.75)

    def test_view_values_are_read_only(self):
        view = self.path.truncated(1)
        self.assertEqual(view.values.shape, (1, 2, 1))
        with self.assertRaises(ValueError):
            view.values[0, 0, 0] = 1.0

    def test_shape_checks(self):
        with self.assertRaises(GridError):
            SamplePath(self.grid, np.zeros((1, 3, 1)))
        with self.assertRaises(GridError):
            SamplePath(self.grid, np.zeros((5,)))
