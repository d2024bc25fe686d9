import unittest

import numpy as np

from privshape.exceptions import ProfileError
from privshape.metrics import mi_iid
from privshape.models import EssModel
from privshape.theory import (
    DiscreteDistribution,
    IdealRegime,
    atom_binning,
    ess_target,
    ftl_leakage_prediction,
    ideal_ess_policy,
    ideal_ftl_policy,
    markov_decomposition_counts,
    run_theory_checks,
    sampled_check,
    verify_propositions,
)

FOUR_ATOMS = DiscreteDistribution.uniform([1.0, 2.0, 3.0, 4.0])


def build_regime(y_star_th: float = 3.0, distribution: DiscreteDistribution = FOUR_ATOMS) -> IdealRegime:
    return IdealRegime(distribution=distribution, thermal_demand_mean=y_star_th - distribution.mean)


class LeakageTests(unittest.TestCase):
    def test_one_atom_above_the_target(self):
        leakage = ftl_leakage_prediction(FOUR_ATOMS, 3.0)
        self.assertAlmostEqual(leakage.exact, 0.811278, delta=1e-6)
        self.assertAlmostEqual(leakage.predicted, 0.5, places=12)
        self.assertAlmostEqual(leakage.exceedance, 0.25, places=12)
        self.assertAlmostEqual(leakage.entropy_x, 2.0, places=12)

    def test_target_above_every_atom_leaks_nothing(self):
        leakage = ftl_leakage_prediction(FOUR_ATOMS, 4.0)
        self.assertEqual(leakage.exact, 0.0)
        self.assertEqual(leakage.predicted, 0.0)

    def test_target_below_every_atom_leaks_everything(self):
        leakage = ftl_leakage_prediction(FOUR_ATOMS, 0.5)
        self.assertAlmostEqual(leakage.exact, 2.0, places=12)
        self.assertAlmostEqual(leakage.predicted, 2.0, places=12)


class IdealPolicyTests(unittest.TestCase):
    def test_flat_battery_leaks_nothing(self):
        x = FOUR_ATOMS.sample(5000, np.random.default_rng(3))
        y = ideal_ess_policy(x, build_regime()).y
        self.assertTrue(np.all(y == y[0]))
        self.assertLessEqual(mi_iid(x, y, atom_binning(x, y)), 1e-9)

    def test_thermal_policy_never_discharges(self):
        x = np.array([1.0, 4.0, 2.0, 3.5])
        np.testing.assert_array_equal(ideal_ftl_policy(x, build_regime()), [3.0, 4.0, 3.0, 3.5])

    def test_finite_battery_flags_the_first_breach(self):
        x = np.array([1.0, 1.0, 1.0, 4.0, 4.0, 4.0, 4.0])
        result = ideal_ess_policy(x, build_regime(), EssModel(capacity_kwh=2.0, initial_soc=0.5))
        self.assertFalse(result.feasible)
        self.assertEqual(result.capacity_violation_step, 0)
        self.assertIsNone(result.power_violation_step)

    def test_battery_target_balances_stored_energy(self):
        rng = np.random.default_rng(8)
        for convention in ("multiply", "divide"):
            model = EssModel(discharge_convention=convention)
            x = rng.uniform(0.2, 5.0, size=200)
            target = ess_target(x, model)
            charge = np.clip(target - x, 0.0, None).sum()
            discharge = np.clip(x - target, 0.0, None).sum()
            with self.subTest(convention=convention):
                self.assertAlmostEqual(
                    model.charge_efficiency * charge - model.discharge_coefficient * discharge, 0.0, delta=1e-8
                )
                self.assertGreater(target, float(np.mean(x)))

    def test_lossless_target_is_the_mean(self):
        model = EssModel(charge_efficiency=1.0, discharge_efficiency=1.0)
        self.assertAlmostEqual(ess_target([1.0, 2.0, 3.0, 4.0], model), 2.5, places=9)
        self.assertEqual(ess_target([2.0, 2.0], model), 2.0)

    def test_regime_from_samples(self):
        regime = IdealRegime.from_samples([1.0, 2.0, 3.0, 4.0], thermal_demand_mean=0.5, ess=EssModel())
        self.assertAlmostEqual(regime.x_mean, 2.5, places=12)
        self.assertAlmostEqual(regime.y_star_th, 3.0, places=12)
        self.assertGreater(regime.y_star_ess, regime.x_mean)


class MarkovCountTests(unittest.TestCase):
    def test_hand_counted_pairs(self):
        x = [1.0, 4.0, 2.0, 4.0, 4.0]
        y = ideal_ftl_policy(x, build_regime())
        counts = markov_decomposition_counts(x, y, 3.0)
        self.assertEqual((counts.g1, counts.g2, counts.g3), (1, 1, 1))

    def test_counts_cover_every_pair(self):
        rng = np.random.default_rng(12)
        for trial in range(10):
            support = np.sort(rng.choice(np.arange(1.0, 9.0), size=int(rng.integers(2, 6)), replace=False))
            distribution = DiscreteDistribution.uniform(support)
            y_star = float(rng.uniform(support[0], support[-1] + 1.0))
            k = int(rng.integers(3, 400))
            x = distribution.sample(k, rng)
            counts = markov_decomposition_counts(x, np.maximum(x, y_star), y_star)
            with self.subTest(trial=trial):
                self.assertEqual(counts.total, k - 2)

    def test_needs_three_samples(self):
        with self.assertRaises(ProfileError):
            markov_decomposition_counts([1.0, 2.0], [3.0, 3.0], 3.0)


class DistributionTests(unittest.TestCase):
    def test_probabilities_must_sum_to_one(self):
        with self.assertRaises(ProfileError):
            DiscreteDistribution(support=(1.0, 2.0), probabilities=(0.5, 0.6))

    def test_atoms_must_be_distinct(self):
        with self.assertRaises(ProfileError):
            DiscreteDistribution(support=(1.0, 1.0), probabilities=(0.5, 0.5))

    def test_from_samples(self):
        distribution = DiscreteDistribution.from_samples([2.0, 1.0, 2.0, 2.0])
        self.assertEqual(distribution.support, (1.0, 2.0))
        self.assertEqual(distribution.probabilities, (0.25, 0.75))
        self.assertAlmostEqual(distribution.exceedance(1.5), 0.75, places=12)


class PropositionTests(unittest.TestCase):
    def test_constant_and_uniform_conditionals(self):
        report = verify_propositions(FOUR_ATOMS.sample(1000, np.random.default_rng(0)))
        self.assertAlmostEqual(report.constant_y_mi, 0.0, places=12)
        self.assertAlmostEqual(report.passthrough_mi, report.entropy_x, places=12)
        self.assertTrue(report.minimal_entropy_holds)
        self.assertTrue(report.maximal_conditional_entropy_holds)
        self.assertTrue(report.uniform_conditional_needs_discharge)
        self.assertTrue(all(value >= 0.0 for value in report.random_mi))

    def test_degenerate_load(self):
        with self.assertRaises(ProfileError):
            verify_propositions([2.0, 2.0, 2.0])


class SampledCheckTests(unittest.TestCase):
    def test_sampled_values_approach_the_closed_form(self):
        check = sampled_check(build_regime(), k=20_000, seed=1)
        self.assertLessEqual(check.ess_mi, 1e-9)
        self.assertAlmostEqual(check.ftl_sampled_mi, 0.811278, delta=0.01)
        self.assertAlmostEqual(check.sampled_exceedance, 0.25, delta=0.02)
        self.assertEqual(check.counts.total, 20_000 - 2)

    def test_default_report_separates_the_device_families(self):
        report = run_theory_checks(k=2000, seed=4)
        self.assertTrue(report.separation_holds)
        self.assertEqual(report.y_star_th, 3.0)
        self.assertAlmostEqual(report.y_star_ess, 2.5, places=12)
        self.assertAlmostEqual(report.leakage.exact, 0.811278, delta=1e-6)


if __name__ == "__main__":
    unittest.main()
