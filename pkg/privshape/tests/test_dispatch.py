import unittest

import numpy as np

from privshape.devices import erh_step
from privshape.dispatch import dispatch_5min, ewh_breach, slot_targets, upsample
from privshape.models import DispatchPlan, ErhModel, EwhModel


class SlotTargetTests(unittest.TestCase):
    def test_nearest_slot_count(self):
        self.assertEqual(slot_targets({"erh.u": 0.5}, 12), {"erh.u": 6})
        self.assertEqual(slot_targets({"erh.u": 0.04}, 12), {"erh.u": 0})
        self.assertEqual(slot_targets({"erh.u": 0.96}, 12), {"erh.u": 12})

    def test_ewh_elements_share_the_hour(self):
        targets = slot_targets({"ewh.u_up": 0.5, "ewh.u_low": 0.7}, 12)
        self.assertEqual(targets, {"ewh.u_up": 6, "ewh.u_low": 6})

    def test_upsample(self):
        np.testing.assert_array_equal(upsample([1.0, 2.0], 3), [1, 1, 1, 2, 2, 2])
        np.testing.assert_allclose(upsample([12.0], 12, total=True), np.ones(12))


class BreachTests(unittest.TestCase):
    def test_largest_breach_wins(self):
        model = EwhModel()
        self.assertEqual(ewh_breach(model, 60.0, 95.0), ("t_up<=abs_max", 5.0))
        self.assertEqual(ewh_breach(model, 76.0, 75.0), ("t_low<=t_up", 1.0))
        self.assertEqual(ewh_breach(model, 70.0, 72.0)[1], 0.0)


class DispatchTests(unittest.TestCase):
    def test_front_loaded_heater_slots(self):
        model = ErhModel()
        plan = dispatch_5min({"erh.u": [0.5]}, {"t_in": 21.0}, erh=model, outdoor_temp=np.zeros(12))
        self.assertEqual(plan.statuses["erh.u"][0], [True] * 6 + [False] * 6)
        self.assertEqual(plan.achieved_duty["erh.u"], [0.5])
        self.assertEqual(plan.deviation_count(), 0)

        t_in = 21.0
        for on in plan.statuses["erh.u"][0]:
            t_in = erh_step(model, t_in, 0.0, 0.0, float(on), 300)
        self.assertEqual(plan.final_state["t_in"], t_in)
        self.assertEqual(plan.temperatures["erh.t_in"][-1], t_in)
        self.assertEqual(len(plan.temperatures["erh.t_in"]), 12)

    def test_hot_tank_defers_the_upper_element(self):
        plan = dispatch_5min(
            {"ewh.u_low": [0.0], "ewh.u_up": [1.0]},
            {"t_low": 89.9, "t_up": 89.9},
            ewh=EwhModel(),
        )
        self.assertEqual(plan.flagged_slots[0], (0, 0))
        self.assertLess(plan.achieved_duty["ewh.u_up"][0], 1.0)
        self.assertEqual(plan.violations, [])
        self.assertTrue(all(t <= 90.0 for t in plan.temperatures["ewh.t_up"]))

    def test_hour_labels_follow_first_hour(self):
        plan = dispatch_5min(
            {"erh.u": [0.25, 0.75]}, {"t_in": 22.0}, erh=ErhModel(), outdoor_temp=np.zeros(24), first_hour=40
        )
        self.assertEqual(plan.hours, [40, 41])
        self.assertEqual(plan.achieved_duty["erh.u"], [0.25, 0.75])

    def test_heater_needs_outdoor_temperature(self):
        with self.assertRaises(ValueError):
            dispatch_5min({"erh.u": [0.5]}, {"t_in": 22.0}, erh=ErhModel())

    def test_short_draw_series(self):
        with self.assertRaises(ValueError):
            dispatch_5min(
                {"ewh.u_low": [0.0], "ewh.u_up": [0.5]}, {"t_low": 70.0, "t_up": 72.0},
                ewh=EwhModel(), draws=np.zeros(6),
            )

    def test_plans_extend(self):
        model = ErhModel()
        first = dispatch_5min({"erh.u": [0.5]}, {"t_in": 21.0}, erh=model, outdoor_temp=np.zeros(12))
        second = dispatch_5min(
            {"erh.u": [1.0]}, dict(first.final_state), erh=model, outdoor_temp=np.zeros(12), first_hour=1
        )
        combined = DispatchPlan()
        combined.extend(first)
        combined.extend(second)
        self.assertEqual(combined.hours, [0, 1])
        self.assertEqual(combined.initial_state, {"t_in": 21.0})
        self.assertEqual(combined.final_state, second.final_state)
        self.assertEqual(len(combined.temperatures["erh.t_in"]), 24)


if __name__ == "__main__":
    unittest.main()
