import tempfile
import unittest
from pathlib import Path

from privshape.exceptions import ScenarioError
from privshape.models import BinningConfig, ErhModel, EssModel, EwhModel, InputPaths, ScenarioConfig, Tariff
from privshape.scenario import dumps_scenario, load_scenario, loads_scenario, save_scenario, scenario_to_dict


def build_scenario() -> ScenarioConfig:
    return ScenarioConfig(
        name="ewh-erh-mu5",
        horizon=12,
        mu=5.0,
        include_energy_cost=False,
        forecast_noise_std=0.1,
        tariff=Tariff(peak_price=30.0, offpeak_price=10.0, peak_hours=(7, 8, 17, 18)),
        binning=BinningConfig(x_bins=12, y_bins=16),
        inputs=InputPaths(sensitive="x.csv", hot_water_draw="draws.csv", outdoor_temp="tout.csv"),
        ewh=EwhModel().with_volume(255.0),
        erh=ErhModel(comfort_weight=5.0),
    )


class ScenarioFileTests(unittest.TestCase):
    def test_round_trip_is_field_by_field_equal(self):
        scenario = build_scenario()
        self.assertEqual(loads_scenario(dumps_scenario(scenario)), scenario)

    def test_round_trip_through_a_file(self):
        scenario = ScenarioConfig(ess=EssModel(discharge_convention="divide"))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "scenario.toml"
            save_scenario(scenario, path)
            self.assertEqual(load_scenario(path), scenario)

    def test_sections_are_flat(self):
        document = scenario_to_dict(build_scenario())
        self.assertEqual(set(document), {"scenario", "tariff", "binning", "inputs", "ewh", "erh"})
        self.assertEqual(document["scenario"]["mu"], 5.0)
        self.assertNotIn("x_max", document["binning"])

    def test_undeclared_devices_are_left_out(self):
        text = dumps_scenario(ScenarioConfig())
        self.assertNotIn("[ess]", text)
        self.assertEqual(loads_scenario(text).devices, [])

    def test_unknown_key_is_an_error(self):
        with self.assertRaises(ScenarioError):
            loads_scenario("[scenario]\nmu = 5.0\nlambda = 1.0\n")

    def test_unknown_device_key_is_an_error(self):
        with self.assertRaises(ScenarioError):
            loads_scenario("[ess]\ncapacity_kwh = 6.29\nvoltage = 48\n")

    def test_unknown_section_is_an_error(self):
        with self.assertRaises(ScenarioError):
            loads_scenario("[heat_pump]\ncop = 3.0\n")

    def test_horizon_must_cover_two_steps(self):
        with self.assertRaises(ScenarioError):
            loads_scenario("[scenario]\nhorizon = 1\n")

    def test_malformed_file(self):
        with self.assertRaises(ScenarioError):
            loads_scenario("[scenario\nmu = ")


class ScenarioPropertiesTests(unittest.TestCase):
    def test_exactly_the_declared_devices(self):
        scenario = build_scenario()
        self.assertEqual(scenario.device_kinds, ("ewh", "erh"))
        self.assertTrue(scenario.has_ftl)
        self.assertEqual(scenario.system_label, "EWH+ERH")
        self.assertEqual(ScenarioConfig().system_label, "None")

    def test_oversized_tank_scales_capacitance(self):
        tank = EwhModel().with_volume(255.0)
        self.assertAlmostEqual(tank.volume_litres, 255.0, places=9)
        self.assertAlmostEqual(tank.capacitance_low, 127.5 * 4.19, places=9)


if __name__ == "__main__":
    unittest.main()
