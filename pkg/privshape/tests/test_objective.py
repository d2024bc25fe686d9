import unittest

import numpy as np

from privshape.exceptions import ColdStartError, InfeasibleAssignmentError
from privshape.metrics import mutual_information_from_joint
from privshape.models import BinningScheme
from privshape.objective import build_mi_program, evaluate_mi_approx, update_constants

SMOOTHING = 0.0583
WINDOW = 24


def build_binning() -> BinningScheme:
    return BinningScheme(x_edges=(0.0, 1.0, 2.0, 3.0), y_edges=(0.0, 1.0, 2.0, 3.0, 4.0))


def build_program(seed: int = 7, forecast=(0.5, 2.5, 0.5, 1.5, 2.5)):
    rng = np.random.default_rng(seed)
    hx = rng.integers(0, 3, size=WINDOW) + 0.5
    hy = rng.integers(0, 4, size=WINDOW) + 0.5
    binning = build_binning()
    constants = update_constants(hx, hy, binning, SMOOTHING, window=WINDOW)
    return build_mi_program(list(forecast), constants, binning)


def random_simplex(rng, horizon: int, n: int) -> np.ndarray:
    z = rng.random((horizon, n))
    return z / z.sum(axis=1, keepdims=True)


class HistoryConstantsTests(unittest.TestCase):
    def test_short_history_is_a_cold_start(self):
        with self.assertRaises(ColdStartError) as ctx:
            update_constants([0.5] * 10, [0.5] * 10, build_binning(), SMOOTHING, window=WINDOW)
        self.assertEqual((ctx.exception.available, ctx.exception.required), (10, WINDOW))

    def test_only_the_trailing_window_counts(self):
        binning = build_binning()
        tail_x, tail_y = [0.5, 1.5, 2.5] * 8, [3.5, 0.5, 1.5] * 8
        recent = update_constants(tail_x, tail_y, binning, SMOOTHING, window=WINDOW)
        longer = update_constants([2.5] * 5 + tail_x, [2.5] * 5 + tail_y, binning, SMOOTHING, window=WINDOW)
        np.testing.assert_array_equal(recent.a, longer.a)

    def test_marginals_and_effective_count(self):
        program = build_program()
        constants = program.constants
        self.assertAlmostEqual(float(constants.a.sum()), 1.0, places=12)
        np.testing.assert_allclose(constants.b, constants.a.sum(axis=0))
        self.assertAlmostEqual(constants.n_eff, WINDOW + SMOOTHING * 12, places=12)


class SurrogateTests(unittest.TestCase):
    def test_constant_is_the_history_mi(self):
        program = build_program()
        self.assertAlmostEqual(program.constant, mutual_information_from_joint(program.constants.a), places=12)

    def test_quadratic_form_matches_term_by_term_value(self):
        rng = np.random.default_rng(1)
        for seed in range(5):
            program = build_program(seed)
            one_hot = program.assignment_for([0.2, 3.9, 1.0, 2.5, 0.7])
            relaxed = random_simplex(rng, program.horizon, program.n)
            for label, z in (("one-hot", one_hot), ("relaxed", relaxed)):
                with self.subTest(seed=seed, z=label):
                    self.assertAlmostEqual(program.quadratic_value(z), evaluate_mi_approx(program, z), delta=1e-10)

    def test_convexified_hessian_is_psd(self):
        program = build_program()
        eigenvalues = np.linalg.eigvalsh(program.convex_hessian.toarray())
        self.assertGreaterEqual(eigenvalues.min(), -1e-12)
        raw = np.linalg.eigvalsh(program.hessian.toarray())
        self.assertAlmostEqual(program.min_eigenvalue, raw.min(), delta=1e-12)

    def test_projection_leaves_psd_blocks_alone(self):
        # one shared X-bin makes every block a positive multiple of the all-ones matrix
        program = build_program(forecast=(1.5, 1.5, 1.5))
        self.assertLess(program.projection_magnitude, 1e-12)
        np.testing.assert_allclose(program.convex_hessian.toarray(), program.hessian.toarray(), atol=1e-14)

    def test_single_step_prefers_the_historical_bin(self):
        binning = build_binning()
        hx = np.tile([0.5, 1.5, 2.5], WINDOW // 3)
        for j0 in range(binning.n):
            hy = np.full(WINDOW, j0 + 0.5)
            constants = update_constants(hx, hy, binning, SMOOTHING, window=WINDOW)
            for x_now in (0.5, 1.5, 2.5):
                program = build_mi_program([x_now], constants, binning)
                values = [evaluate_mi_approx(program, np.eye(binning.n)[j][np.newaxis, :]) for j in range(binning.n)]
                with self.subTest(j0=j0, x=x_now):
                    self.assertEqual(int(np.argmin(values)), j0)

    def test_assignment_places_y_in_its_bin(self):
        program = build_program()
        z = program.assignment_for([0.0, 1.0, 3.99, 4.0, 2.2])
        np.testing.assert_array_equal(np.argmax(z, axis=1), [0, 1, 3, 3, 2])
        np.testing.assert_array_equal(z.sum(axis=1), np.ones(5))


class AssignmentFormTests(unittest.TestCase):
    def test_full_and_compact_forms_agree(self):
        program = build_program()
        compact = random_simplex(np.random.default_rng(4), program.horizon, program.n)
        full = np.zeros((program.horizon, 3, program.n))
        full[np.arange(program.horizon), program.x_bins, :] = compact
        self.assertAlmostEqual(evaluate_mi_approx(program, full), evaluate_mi_approx(program, compact), places=14)

    def test_mass_outside_forecast_row(self):
        program = build_program()
        full = np.zeros((program.horizon, 3, program.n))
        full[np.arange(program.horizon), program.x_bins, 0] = 1.0
        full[0, (program.x_bins[0] + 1) % 3, 0] = 0.5
        with self.assertRaises(InfeasibleAssignmentError):
            evaluate_mi_approx(program, full)

    def test_rows_must_sum_to_one(self):
        program = build_program()
        z = np.full((program.horizon, program.n), 0.3)
        with self.assertRaises(InfeasibleAssignmentError):
            evaluate_mi_approx(program, z)

    def test_wrong_full_shape(self):
        program = build_program()
        with self.assertRaises(InfeasibleAssignmentError):
            evaluate_mi_approx(program, np.zeros((program.horizon, 2, program.n)))

    def test_standalone_program_shape(self):
        program = build_program()
        qp = program.standalone(0.0, 4.0)
        self.assertEqual(qp.n_vars, program.horizon * (1 + program.n))
        self.assertEqual(qp.b.size, program.horizon)
        self.assertEqual(qp.h.size, 2 * program.horizon)


if __name__ == "__main__":
    unittest.main()
