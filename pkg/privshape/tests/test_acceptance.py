import itertools
import os
import unittest

import numpy as np

from privshape.auditor import audit_run
from privshape.controller import build_horizon_program, horizon_forecast, run_receding_horizon
from privshape.devices import build_devices
from privshape.harness import required_days
from privshape.models import ErhModel, EssModel, EwhModel, ScenarioConfig
from privshape.optimizer import SolverStatus, solve_miqp, solve_qp
from privshape.synthetic import generate_synthetic_profile

SLOW = os.environ.get("PRIVSHAPE_SLOW_TESTS") == "1"


def enumerate_binaries(qp) -> float:
    best = np.inf
    for combo in itertools.product((0.0, 1.0), repeat=len(qp.binaries)):
        lb, ub = qp.lb.copy(), qp.ub.copy()
        lb[list(qp.binaries)] = combo
        ub[list(qp.binaries)] = combo
        solution = solve_qp(qp.with_bounds(lb, ub))
        if solution.status == SolverStatus.OPTIMAL:
            best = min(best, solution.objective)
    return best


class BatterySchedulingTests(unittest.TestCase):
    def test_branch_and_bound_matches_enumeration(self):
        bundle = generate_synthetic_profile(23618, days=7)
        rng = np.random.default_rng(20)
        for trial in range(20):
            scenario = ScenarioConfig(
                horizon=int(rng.integers(2, 6)),
                ess=EssModel(initial_soc=float(rng.uniform(0.1, 0.9))),
                history_window=24,
                days=1,
            )
            devices = build_devices(scenario.devices)
            states = {d.kind: d.initial_state() for d in devices}
            binning = scenario.binning.resolve(bundle.sensitive.values)
            index = int(rng.integers(24, bundle.grid.count - scenario.horizon))
            forecast = horizon_forecast(bundle, scenario, index, binning.x_edges[-1])
            qp = build_horizon_program(devices, states, forecast, scenario, None, binning).qp
            expected = enumerate_binaries(qp)
            solution = solve_miqp(qp)
            with self.subTest(trial=trial):
                self.assertEqual(solution.status, SolverStatus.OPTIMAL)
                self.assertAlmostEqual(solution.objective, expected, delta=1e-6 * max(1.0, abs(expected)) + 1e-8)


@unittest.skipUnless(SLOW, "set PRIVSHAPE_SLOW_TESTS=1")
class MonthDirectionTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        base = ScenarioConfig(name="month")
        cls.bundle = generate_synthetic_profile(23618, days=required_days(base))
        runs = {
            "none": base,
            "ess-mu0": base.model_copy(update={"ess": EssModel()}),
            "ess-mu5": base.model_copy(update={"ess": EssModel(), "mu": 5.0}),
            "ewh-mu5": base.model_copy(update={"ewh": EwhModel(), "mu": 5.0}),
            "both-mu5": base.model_copy(update={"ewh": EwhModel(), "erh": ErhModel(), "mu": 5.0}),
        }
        cls.scenarios = runs
        cls.outcomes = {name: run_receding_horizon(scenario, cls.bundle, name) for name, scenario in runs.items()}

    def report(self, name):
        return self.outcomes[name].report

    def test_privacy_weight_lowers_battery_leakage(self):
        self.assertLess(self.report("ess-mu5").iid_mi, self.report("ess-mu0").iid_mi)

    def test_battery_leaks_less_than_the_water_heater(self):
        self.assertLess(self.report("ess-mu5").iid_mi, self.report("ewh-mu5").iid_mi)

    def test_room_heater_adds_time_correlated_leakage(self):
        self.assertGreater(self.report("both-mu5").markov_mi, self.report("ewh-mu5").markov_mi)

    def test_protected_leakage_stays_below_the_load_entropy(self):
        for name in ("ess-mu5", "ewh-mu5", "both-mu5"):
            with self.subTest(run=name):
                self.assertLess(self.report(name).iid_mi, self.report(name).entropy_x)

    def test_cost_aware_battery_beats_passthrough(self):
        self.assertLess(self.report("ess-mu0").total_cost_cents, self.report("none").total_cost_cents)

    def test_thermal_runs_never_discharge_and_audit_clean(self):
        for name, outcome in self.outcomes.items():
            with self.subTest(run=name):
                self.assertTrue(audit_run(outcome, self.scenarios[name], self.bundle).ok)
                if self.scenarios[name].has_ftl:
                    self.assertTrue(np.all(outcome.y >= outcome.x))


if __name__ == "__main__":
    unittest.main()
