import unittest

import numpy as np

from privshape.auditor import audit_run
from privshape.controller import (
    build_horizon_program,
    horizon_forecast,
    objective_is_trivial,
    plan_step_ess,
    plan_step_ftl,
    run_receding_horizon,
)
from privshape.devices import build_devices
from privshape.exceptions import ProfileError, ScenarioError
from privshape.models import BinningConfig, ErhModel, EssModel, EwhModel, ScenarioConfig
from privshape.synthetic import generate_synthetic_profile

BUNDLE = None


def build_bundle():
    global BUNDLE
    if BUNDLE is None:
        BUNDLE = generate_synthetic_profile(23618, days=8)
    return BUNDLE


def build_scenario(**overrides) -> ScenarioConfig:
    fields = dict(name="test", history_window=24, days=1, horizon=4)
    fields.update(overrides)
    return ScenarioConfig(**fields)


class PassthroughTests(unittest.TestCase):
    def test_no_devices_commits_the_load(self):
        outcome = run_receding_horizon(build_scenario(), build_bundle())
        np.testing.assert_array_equal(outcome.y, outcome.x)
        self.assertEqual(outcome.report.system, "None")
        self.assertEqual(outcome.report.steps, 24)
        self.assertEqual(outcome.start_index, 24)
        np.testing.assert_array_equal(outcome.x, build_bundle().sensitive.values[24:48])

    def test_cost_blind_battery_without_privacy_is_idle(self):
        scenario = build_scenario(ess=EssModel(), include_energy_cost=False)
        self.assertTrue(objective_is_trivial(scenario, build_devices(scenario.devices)))
        outcome = run_receding_horizon(scenario, build_bundle())
        np.testing.assert_array_equal(outcome.y, outcome.x)
        np.testing.assert_array_equal(outcome.trajectories["ess.energy"], np.full(24, 3.145))
        self.assertEqual(outcome.report.solver_failures, 0)


class EssRunTests(unittest.TestCase):
    def test_cost_aware_battery_lowers_the_bill(self):
        bundle = build_bundle()
        baseline = run_receding_horizon(build_scenario(), bundle)
        outcome = run_receding_horizon(build_scenario(ess=EssModel()), bundle)
        self.assertLess(outcome.report.total_cost_cents, baseline.report.total_cost_cents)
        self.assertTrue(np.all(outcome.y >= -1e-6))
        self.assertTrue(np.all(outcome.y <= 12.0 + 1e-6))
        self.assertTrue(audit_run(outcome, build_scenario(ess=EssModel()), bundle).ok)
        self.assertEqual(outcome.report.equivalent_storage_kwh, 6.29)


class FtlRunTests(unittest.TestCase):
    def test_water_heater_only_adds_load(self):
        scenario = build_scenario(ewh=EwhModel())
        outcome = run_receding_horizon(scenario, build_bundle())
        self.assertTrue(np.all(outcome.y >= outcome.x))
        self.assertTrue(np.all(outcome.trajectories["ewh.s"] >= 0))
        self.assertTrue(audit_run(outcome, scenario, build_bundle()).ok)
        self.assertGreater(outcome.report.equivalent_storage_kwh, 0.0)

    def test_privacy_weighted_thermal_loads(self):
        scenario = build_scenario(ewh=EwhModel(), erh=ErhModel(), mu=5.0)
        outcome = run_receding_horizon(scenario, build_bundle())
        self.assertEqual(outcome.report.system, "EWH+ERH")
        self.assertTrue(np.all(outcome.y >= outcome.x))
        self.assertTrue(audit_run(outcome, scenario, build_bundle()).ok)
        self.assertEqual(set(outcome.report.categories), {"ewh", "erh"})

    def test_step_load_dispatch_replays_exactly(self):
        scenario = build_scenario(ewh=EwhModel(), step_load=True)
        outcome = run_receding_horizon(scenario, build_bundle())
        self.assertIsNotNone(outcome.dispatch)
        self.assertEqual(len(outcome.dispatch.hours), 24 - outcome.report.solver_failures)
        audit = audit_run(outcome, scenario, build_bundle())
        self.assertFalse([check for check in audit.checks() if check.endswith("replay")])
        self.assertEqual(audit.checked_slots, 12 * len(outcome.dispatch.hours))

    def test_step_load_peak_above_y_max(self):
        scenario = build_scenario(ewh=EwhModel(), step_load=True, binning=BinningConfig(y_max=8.0))
        with self.assertRaises(ScenarioError):
            run_receding_horizon(scenario, build_bundle())


class HorizonProgramTests(unittest.TestCase):
    def test_program_balances_every_step(self):
        bundle = build_bundle()
        scenario = build_scenario(ewh=EwhModel())
        devices = build_devices(scenario.devices)
        states = {d.kind: d.initial_state() for d in devices}
        binning = scenario.binning.resolve(bundle.sensitive.values)
        forecast = horizon_forecast(bundle, scenario, 24, binning.x_edges[-1])
        program = build_horizon_program(devices, states, forecast, scenario, None, binning)
        self.assertIsNone(program.z)
        self.assertEqual(set(program.comfort), {"ewh"})
        # initial temperatures, two node equations per step, one balance row per step
        self.assertEqual(program.qp.b.size, 2 + 2 * scenario.horizon + scenario.horizon)
        np.testing.assert_allclose(program.cost_weights, forecast.prices / scenario.horizon)

    def test_forecast_prices_scale_to_objective_units(self):
        bundle = build_bundle()
        on = horizon_forecast(bundle, build_scenario(), 30, 6.0)
        off = horizon_forecast(bundle, build_scenario(include_energy_cost=False), 30, 6.0)
        self.assertTrue(np.all(on.prices > 0))
        self.assertTrue(np.all(off.prices == 0))
        self.assertAlmostEqual(float(on.prices[0]), 0.246, places=12)  # 06:00 is peak

    def test_forecast_noise_leaves_the_current_step(self):
        bundle = build_bundle()
        scenario = build_scenario(forecast_noise_std=0.5)
        noisy = horizon_forecast(bundle, scenario, 30, 6.0, np.random.default_rng(0))
        self.assertEqual(noisy.x[0], bundle.sensitive.values[30])
        self.assertFalse(np.array_equal(noisy.x[1:], bundle.sensitive.values[31:34]))


class StepEntryPointTests(unittest.TestCase):
    def test_ess_entry_point_rejects_thermal_scenarios(self):
        with self.assertRaises(ScenarioError):
            plan_step_ess({}, None, build_scenario(ewh=EwhModel()), None, None)

    def test_ftl_entry_point_rejects_battery_scenarios(self):
        with self.assertRaises(ScenarioError):
            plan_step_ftl({}, None, build_scenario(ess=EssModel()), None, None)

    def test_ftl_step_without_privacy(self):
        bundle = build_bundle()
        scenario = build_scenario(erh=ErhModel())
        binning = scenario.binning.resolve(bundle.sensitive.values)
        forecast = horizon_forecast(bundle, scenario, 24, binning.x_edges[-1])
        states = {"erh": build_devices(scenario.devices)[0].initial_state()}
        result = plan_step_ftl(states, forecast, scenario, None, binning)
        self.assertGreaterEqual(result.y, result.x)
        self.assertEqual(result.y, result.x + result.s)
        self.assertIn("erh", result.next_state)


class InputCoverageTests(unittest.TestCase):
    def test_too_short_for_history_and_lookahead(self):
        with self.assertRaises(ProfileError):
            run_receding_horizon(build_scenario(days=30), build_bundle())

    def test_heater_needs_weather(self):
        bundle = build_bundle().model_copy(update={"outdoor_temp": None})
        with self.assertRaises(ProfileError):
            run_receding_horizon(build_scenario(erh=ErhModel()), bundle)


if __name__ == "__main__":
    unittest.main()
