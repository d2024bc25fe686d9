import math
import unittest
from collections import Counter

import numpy as np
from hypothesis import given, settings, strategies as st

from privshape.exceptions import BinRangeError, ProfileError
from privshape.metrics import entropy, estimate_pdf, mi_iid, mi_markov, mutual_information_from_joint, score
from privshape.models import BinningScheme


def integer_binning(m: int, n: int) -> BinningScheme:
    return BinningScheme(x_edges=tuple(float(v) for v in range(m + 1)), y_edges=tuple(float(v) for v in range(n + 1)))


def plugin_entropy(samples) -> float:
    counts = Counter(samples)
    k = sum(counts.values())
    return -sum(c / k * math.log2(c / k) for c in counts.values())


def double_sum_mi(x, y) -> float:
    k = len(x)
    joint, px, py = Counter(zip(x, y)), Counter(x), Counter(y)
    return sum(c / k * math.log2((c / k) / ((px[a] / k) * (py[b] / k))) for (a, b), c in joint.items())


def brute_force_markov(x, y) -> float:
    k = len(x)
    pairs_x = list(zip(x[1:], x[:-1]))
    pairs_y = list(zip(y[1:], y[:-1]))
    i_pair = plugin_entropy(pairs_x) + plugin_entropy(pairs_y) - plugin_entropy(list(zip(pairs_x, pairs_y)))
    i_single = plugin_entropy(x) + plugin_entropy(y) - plugin_entropy(list(zip(x, y)))
    return max(((k - 1) * i_pair - (k - 2) * i_single) / k, 0.0)


class IidMiTests(unittest.TestCase):
    def test_matches_double_sum_and_entropy_identity(self):
        rng = np.random.default_rng(3)
        for trial in range(50):
            m, n = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            k = int(rng.integers(2, 201))
            ix = rng.integers(0, m, size=k)
            # correlated y half of the time
            iy = (ix + rng.integers(0, 2, size=k)) % n if trial % 2 else rng.integers(0, n, size=k)
            x, y = ix + 0.5, iy + 0.5
            value = mi_iid(x, y, integer_binning(m, n))
            with self.subTest(trial=trial):
                self.assertAlmostEqual(value, double_sum_mi(ix.tolist(), iy.tolist()), delta=1e-9)
                identity = plugin_entropy(ix.tolist()) + plugin_entropy(iy.tolist()) - plugin_entropy(
                    list(zip(ix.tolist(), iy.tolist()))
                )
                self.assertAlmostEqual(value, max(identity, 0.0), delta=1e-9)

    def test_constant_y_leaks_nothing(self):
        x = np.array([0.5, 1.5, 2.5, 3.5] * 10)
        self.assertEqual(mi_iid(x, np.full(x.size, 2.5), integer_binning(4, 4)), 0.0)

    def test_passthrough_leaks_the_entropy(self):
        x = np.array([0.5, 1.5, 2.5, 3.5] * 10)
        self.assertAlmostEqual(mi_iid(x, x, integer_binning(4, 4)), 2.0, places=12)

    def test_length_mismatch(self):
        with self.assertRaises(ProfileError):
            mi_iid([0.5, 1.5], [0.5], integer_binning(2, 2))

    def test_out_of_range_value(self):
        with self.assertRaises(BinRangeError):
            mi_iid([0.5, 9.0], [0.5, 0.5], integer_binning(2, 2))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=2, max_size=60))
    def test_never_negative_and_bounded_by_entropy(self, pairs):
        ix = np.array([p[0] for p in pairs])
        iy = np.array([p[1] for p in pairs])
        value = mi_iid(ix + 0.5, iy + 0.5, integer_binning(4, 4))
        self.assertGreaterEqual(value, 0.0)
        self.assertLessEqual(value, plugin_entropy(ix.tolist()) + 1e-9)

    def test_symmetric_in_x_and_y(self):
        rng = np.random.default_rng(17)
        for trial in range(20):
            m, n = int(rng.integers(2, 7)), int(rng.integers(2, 7))
            ix = rng.integers(0, m, size=120)
            iy = np.where(rng.random(120) < 0.6, ix % n, rng.integers(0, n, size=120))
            forward = mi_iid(ix + 0.5, iy + 0.5, integer_binning(m, n))
            backward = mi_iid(iy + 0.5, ix + 0.5, integer_binning(n, m))
            with self.subTest(trial=trial):
                self.assertAlmostEqual(forward, backward, delta=1e-12)

    def test_merging_y_bins_cannot_increase_leakage(self):
        rng = np.random.default_rng(23)
        coarse_edges = (0.0, 2.0, 4.0, 6.0)
        for trial in range(20):
            ix = rng.integers(0, 5, size=200)
            iy = np.where(rng.random(200) < 0.5, ix, rng.integers(0, 6, size=200))
            fine = integer_binning(5, 6)
            coarse = BinningScheme(x_edges=fine.x_edges, y_edges=coarse_edges)
            with self.subTest(trial=trial):
                self.assertLessEqual(mi_iid(ix + 0.5, iy + 0.5, coarse), mi_iid(ix + 0.5, iy + 0.5, fine) + 1e-12)


class MarkovMiTests(unittest.TestCase):
    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        for trial in range(20):
            m, n = int(rng.integers(2, 7)), int(rng.integers(2, 7))
            ix = rng.integers(0, m, size=500)
            iy = np.where(rng.random(500) < 0.5, ix % n, rng.integers(0, n, size=500))
            value = mi_markov(ix + 0.5, iy + 0.5, integer_binning(m, n))
            with self.subTest(trial=trial):
                self.assertAlmostEqual(value, brute_force_markov(ix.tolist(), iy.tolist()), delta=1e-9)

    def test_asymptotic_form_drops_the_leading_pair_term(self):
        rng = np.random.default_rng(5)
        ix = rng.integers(0, 4, size=300)
        iy = (ix + rng.integers(0, 2, size=300)) % 4
        binning = integer_binning(4, 4)
        finite = mi_markov(ix + 0.5, iy + 0.5, binning)
        limit = mi_markov(ix + 0.5, iy + 0.5, binning, asymptotic=True)
        self.assertNotEqual(finite, limit)
        self.assertGreaterEqual(limit, 0.0)

    def test_independent_chains_leak_nothing(self):
        # periods 2 and 3: every (x pair, y pair) combination occurs equally often
        k = 601
        x = np.arange(k) % 2 + 0.5
        y = np.arange(k) % 3 + 0.5
        value = mi_markov(x, y, integer_binning(2, 3))
        self.assertGreaterEqual(value, 0.0)
        self.assertLessEqual(value, 1e-9)

    def test_needs_three_samples(self):
        with self.assertRaises(ProfileError):
            mi_markov([0.5, 1.5], [0.5, 1.5], integer_binning(2, 2))


class PdfTests(unittest.TestCase):
    def test_smoothed_probabilities_sum_to_one(self):
        binning = integer_binning(3, 5)
        pdf = estimate_pdf(([0.5, 1.5, 1.5], [4.5, 0.5, 0.5]), binning, smoothing=0.0583)
        self.assertEqual(pdf.shape, (3, 5))
        self.assertAlmostEqual(float(pdf.probabilities.sum()), 1.0, places=12)
        self.assertTrue(np.all(pdf.probabilities > 0))
        np.testing.assert_allclose(pdf.marginal(0).sum(), 1.0)

    def test_smoothing_example(self):
        binning = BinningScheme(x_edges=(0.0, 12.0), y_edges=(0.0, 6.0, 12.0))
        samples = [0.1, 0.1, 11.9]
        for smoothing, expected in ((0.0, [2 / 3, 1 / 3]), (1.0, [3 / 5, 2 / 5])):
            with self.subTest(smoothing=smoothing):
                pdf = estimate_pdf(samples, binning, smoothing=smoothing, axes=("y",))
                np.testing.assert_allclose(pdf.probabilities, expected, rtol=0, atol=1e-15)

    def test_single_axis_on_y(self):
        pdf = estimate_pdf([0.5, 0.5, 4.5], integer_binning(3, 5), axes=("y",))
        np.testing.assert_allclose(pdf.probabilities, [2 / 3, 0, 0, 0, 1 / 3])
        self.assertAlmostEqual(entropy(pdf), plugin_entropy([0, 0, 4]), places=12)

    def test_joint_table_mi(self):
        self.assertAlmostEqual(mutual_information_from_joint(np.eye(2) / 2), 1.0, places=12)
        self.assertEqual(mutual_information_from_joint(np.full((2, 2), 0.25)), 0.0)

    def test_score_bundles_all_three(self):
        x = np.array([0.5, 1.5, 2.5, 3.5] * 5)
        report = score(x, x, integer_binning(4, 4))
        self.assertAlmostEqual(report.iid_mi, 2.0, places=12)
        self.assertAlmostEqual(report.entropy_x, 2.0, places=12)
        self.assertEqual(report.sample_count, 20)
        self.assertGreater(report.markov_mi, 0.0)


if __name__ == "__main__":
    unittest.main()
