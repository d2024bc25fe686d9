import unittest
from datetime import datetime

import numpy as np
from hypothesis import given, settings, strategies as st
from pydantic import ValidationError

from privshape.core import bin_index, bin_indices, energy_cost
from privshape.exceptions import BinRangeError, ProfileError
from privshape.models import BinningConfig, BinningScheme, LoadProfile, ProfileRole, Tariff, TimeGrid

EDGES = np.linspace(0.0, 12.0, 25)


def build_profile(values, role=ProfileRole.GRID, start=datetime(2023, 1, 2), step=3600) -> LoadProfile:
    return LoadProfile(grid=TimeGrid(start=start, step_seconds=step, count=len(values)), values=values, role=role)


class BinIndexTests(unittest.TestCase):
    def test_lower_boundary_is_first_bin(self):
        self.assertEqual(bin_index(0.0, EDGES), 1)

    def test_top_edge_is_closed(self):
        self.assertEqual(bin_index(12.0, EDGES), 24)

    def test_half_open_interior(self):
        self.assertEqual(bin_index(3.2, EDGES), 7)

    def test_interior_edge_belongs_to_upper_bin(self):
        self.assertEqual(bin_index(0.5, EDGES), 2)

    def test_out_of_range_names_the_step(self):
        with self.assertRaises(BinRangeError) as ctx:
            bin_index(12.5, EDGES, step=17)
        self.assertEqual(ctx.exception.step, 17)
        self.assertIn("step 17", str(ctx.exception))

    def test_vectorized_form_is_zero_based(self):
        np.testing.assert_array_equal(bin_indices([0.0, 3.2, 12.0], EDGES), [0, 6, 23])

    def test_vectorized_form_reports_first_bad_step(self):
        with self.assertRaises(BinRangeError) as ctx:
            bin_indices([1.0, 2.0, -0.1, 13.0], EDGES)
        self.assertEqual(ctx.exception.step, 2)

    def test_midpoints_cover_every_bin(self):
        midpoints = (EDGES[:-1] + EDGES[1:]) / 2
        self.assertEqual([bin_index(v, EDGES) for v in midpoints], list(range(1, 25)))

    @settings(max_examples=200, deadline=None)
    @given(
        st.floats(min_value=0.0, max_value=12.0, allow_nan=False),
        st.floats(min_value=0.0, max_value=12.0, allow_nan=False),
    )
    def test_monotone_in_value(self, a, b):
        low, high = min(a, b), max(a, b)
        self.assertLessEqual(bin_index(low, EDGES), bin_index(high, EDGES))


class EnergyCostTests(unittest.TestCase):
    def test_zero_load_costs_nothing(self):
        self.assertEqual(energy_cost(build_profile(np.zeros(24)), Tariff()), 0.0)

    def test_one_kw_for_a_day(self):
        self.assertAlmostEqual(energy_cost(build_profile(np.ones(24)), Tariff()), 16 * 24.6 + 8 * 13.15, places=9)

    def test_single_offpeak_step(self):
        profile = build_profile([2.0], start=datetime(2023, 1, 2, 3))
        self.assertAlmostEqual(energy_cost(profile, Tariff()), 26.3, places=12)

    def test_sub_hourly_steps_scale_by_duration(self):
        profile = build_profile(np.full(12, 2.0), start=datetime(2023, 1, 2, 3), step=300)
        self.assertAlmostEqual(energy_cost(profile, Tariff()), 26.3, places=9)

    def test_temperature_profile_is_rejected(self):
        with self.assertRaises(ProfileError):
            energy_cost(build_profile([20.0], role=ProfileRole.OUTDOOR_TEMP), Tariff())


class DomainTypeTests(unittest.TestCase):
    def test_tariff_rejects_inverted_prices(self):
        with self.assertRaises(ValidationError):
            Tariff(peak_price=10.0, offpeak_price=12.0)

    def test_tariff_rejects_hours_outside_day(self):
        with self.assertRaises(ValidationError):
            Tariff(peak_hours=(6, 24))

    def test_grid_step_must_align_with_hour(self):
        with self.assertRaises(ValidationError):
            TimeGrid(start=datetime(2023, 1, 2), step_seconds=420, count=3)
        self.assertEqual(TimeGrid(start=datetime(2023, 1, 2), step_seconds=7200, count=1).step_hours, 2.0)

    def test_sensitive_load_must_be_non_negative(self):
        with self.assertRaises(ProfileError):
            build_profile([1.0, -0.5], role=ProfileRole.SENSITIVE)

    def test_profile_values_are_read_only(self):
        profile = build_profile([1.0, 2.0])
        with self.assertRaises(ValueError):
            profile.values[0] = 5.0

    def test_uniform_binning_fixes_y_support(self):
        binning = BinningScheme.uniform(5.22)
        self.assertEqual((binning.m, binning.n), (24, 24))
        self.assertEqual(binning.y_edges[0], 0.0)
        self.assertEqual(binning.y_edges[-1], 12.0)
        self.assertEqual(binning.x_edges[-1], 5.22)

    def test_resolved_x_edges_cover_every_step(self):
        # the peak arrives after the warm-up window
        values = np.r_[np.full(168, 1.0), [0.5, 6.3, 2.0]]
        binning = BinningConfig().resolve(values)
        self.assertEqual(binning.x_edges[-1], 6.3)
        self.assertEqual(bin_indices(values, binning.x_edges)[169], binning.m - 1)
        configured = BinningConfig(x_max=8.0).resolve(values)
        self.assertEqual(configured.x_edges[-1], 8.0)


if __name__ == "__main__":
    unittest.main()
