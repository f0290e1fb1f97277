import math

import numpy as np
import pytest

from multiobs.analytics import (
    EnsembleAccumulator,
    compare_exponential,
    default_estimator_labels,
    estimate_O,
    oracle_O1_photo,
    oracle_O11_photo,
    oracle_O12_homodyne,
    oracle_O12_photo,
    oracle_O_homodyne,
    oracle_nojump_bloch,
    oracle_nojump_bloch_single,
    parse_estimator_label,
    two_sample_ks,
    waiting_time_density,
    waiting_time_histogram,
)
from multiobs.errors import AnalyticsError


def make_acc(labels=("O_1",), times=(0.0, 1.0, 2.0)):
    return EnsembleAccumulator(times=np.asarray(times), labels=labels)


def fill(acc, values):
    # values: (P, T, n) per-trajectory functionals
    values = np.asarray(values, dtype=float)
    for t in range(values.shape[1]):
        acc.add_time_sample(t, values[:, t, :])
    acc.n_traj = values.shape[2]
    acc.add_tail_values(values.mean(axis=1))
    return acc


class TestLabels:
    def test_parse(self):
        assert parse_estimator_label("O_1") == ("super", 0, None)
        assert parse_estimator_label("O_22") == ("self", 1, 1)
        assert parse_estimator_label("O_12") == ("pair", 0, 1)

    def test_bad_labels(self):
        for label in ("O12", "O_0", "O_123", "purity"):
            with pytest.raises(AnalyticsError):
                parse_estimator_label(label)

    def test_defaults(self):
        assert default_estimator_labels(2) == ("O_1", "O_11", "O_2", "O_22", "O_12")


class TestAccumulator:
    def test_identical_trajectories_have_zero_error(self):
        acc = fill(make_acc(), 0.5 * np.ones((1, 3, 8)))
        mean, se = acc.estimate("O_1", 2)
        assert mean == pytest.approx(0.5)
        assert se == 0.0
        assert estimate_O(acc, "O_1", 2) == (mean, se)

    def test_needs_two_trajectories(self):
        acc = fill(make_acc(), 0.5 * np.ones((1, 3, 1)))
        with pytest.raises(AnalyticsError):
            acc.estimate("O_1", 0)

    def test_unknown_label(self):
        acc = fill(make_acc(), 0.5 * np.ones((1, 3, 4)))
        with pytest.raises(AnalyticsError):
            acc.estimate("O_12", 0)

    def test_merge_is_associative_and_commutative(self):
        rng = np.random.default_rng(5)
        parts = [fill(make_acc(), rng.uniform(0, 1, (1, 3, 7))) for _ in range(3)]
        a, b, c = parts
        left = a.merge(b).merge(c)
        right = a.merge(b.merge(c))
        swapped = c.merge(a).merge(b)
        for other in (right, swapped):
            assert np.allclose(left.sums, other.sums, atol=1e-12)
            assert np.allclose(left.sumsq, other.sumsq, atol=1e-12)
            assert left.n_traj == other.n_traj
        m1, s1 = left.estimate("O_1", 1)
        m2, s2 = swapped.estimate("O_1", 1)
        assert m1 == pytest.approx(m2, abs=1e-12)
        assert s1 == pytest.approx(s2, abs=1e-12)

    def test_estimates_invariant_under_reordering(self):
        rng = np.random.default_rng(6)
        values = rng.uniform(0, 1, (1, 3, 40))
        perm = rng.permutation(40)
        a = fill(make_acc(), values)
        b = fill(make_acc(), values[:, :, perm])
        assert a.estimate("O_1", 2)[0] == pytest.approx(b.estimate("O_1", 2)[0], abs=1e-12)
        assert a.estimate_asymptote("O_1")[0] == pytest.approx(
            b.estimate_asymptote("O_1")[0], abs=1e-12
        )

    def test_series_matches_pointwise(self):
        rng = np.random.default_rng(7)
        acc = fill(make_acc(), rng.uniform(0, 1, (1, 3, 9)))
        means, ses = acc.estimate_series("O_1")
        for t in range(3):
            mt, st = acc.estimate("O_1", t)
            assert means[t] == pytest.approx(mt) and ses[t] == pytest.approx(st)

    def test_waits_concatenate_on_merge(self):
        a, b = make_acc(), make_acc()
        a.add_waits(0, np.array([1.0, 2.0]))
        b.add_waits(0, np.array([3.0]))
        a.n_traj = b.n_traj = 2
        merged = a.merge(b)
        assert sorted(merged.waiting_times(0).tolist()) == [1.0, 2.0, 3.0]


class TestPhotodetectionOracles:
    def test_reference_points(self):
        assert oracle_O1_photo(0.5) == pytest.approx(0.625, abs=1e-15)
        assert oracle_O1_photo(0.0) == pytest.approx(0.5)
        assert oracle_O1_photo(1.0) == pytest.approx(1.0)

    def test_self_purity_equals_super_overlap_on_grid(self):
        # two independently written closed forms agree identically
        for eta in np.linspace(0.0, 1.0, 101):
            assert abs(oracle_O1_photo(eta) - oracle_O11_photo(eta)) < 1e-14

    def test_pair_values_from_figures(self):
        assert oracle_O12_photo(0.5, 0.5) - 0.5 == pytest.approx(-0.025, abs=1e-15)
        assert oracle_O12_photo(0.7, 0.3) - 0.5 == pytest.approx(-0.022, abs=5e-4)

    def test_anticorrelation(self):
        for e1, e2 in ((0.2, 0.3), (0.5, 0.5), (0.9, 0.1)):
            assert oracle_O12_photo(e1, e2) < 0.5

    def test_range_guards(self):
        with pytest.raises(AnalyticsError):
            oracle_O1_photo(1.2)
        with pytest.raises(AnalyticsError):
            oracle_O12_photo(0.8, 0.4)


class TestHomodyneOracles:
    def test_x_quadrature(self):
        assert oracle_O_homodyne(0.1, 0.0) == pytest.approx(0.55, abs=1e-15)

    def test_y_quadrature(self):
        assert oracle_O_homodyne(0.1, math.pi / 2) == pytest.approx(0.5 + 0.1 / 3.0, abs=1e-12)

    def test_small_eta_pair(self):
        assert oracle_O12_homodyne(0.01, 0.0, 0.01, 0.0) == pytest.approx(0.5 + 1e-4, abs=1e-12)

    def test_crossed_quadratures_uncorrelated(self):
        val = oracle_O12_homodyne(0.3, 0.0, 0.3, math.pi / 2)
        assert abs(val - 0.5) < 1e-16

    def test_maximized_on_pointer_quadrature(self):
        best = oracle_O12_homodyne(0.1, 0.0, 0.1, 0.0)
        for phi in (0.3, 1.0, math.pi / 2):
            assert oracle_O12_homodyne(0.1, phi, 0.1, phi) <= best


class TestNojumpBloch:
    def test_post_detection_state(self):
        assert oracle_nojump_bloch(0.0, 0.6, 20.0) == pytest.approx((0.0, 0.0, -1.0))

    def test_full_efficiency_stays_pure(self):
        for t in (0.1, 1.0, 5.0):
            x, y, z = oracle_nojump_bloch(t, 1.0, 20.0)
            assert x * x + y * y + z * z == pytest.approx(1.0, abs=1e-12)

    def test_single_observer_variant(self):
        assert oracle_nojump_bloch_single(0.7, 0.3, 5.0) == oracle_nojump_bloch(0.7, 0.3, 5.0)


class TestWaitingTimes:
    def test_density_normalization(self):
        tau = np.linspace(0, 400, 200001)
        dens = waiting_time_density(tau, 0.3)
        assert np.trapezoid(dens, tau) == pytest.approx(1.0, abs=1e-6)

    def test_self_consistent_exponential_sample(self):
        rng = np.random.default_rng(11)
        waits = rng.exponential(scale=2.0 / 0.3, size=10_000)
        res = compare_exponential(waits, 0.15)
        assert res.pvalue > 0.01

    def test_histogram_reporting(self):
        rng = np.random.default_rng(12)
        waits = rng.exponential(scale=2.0, size=5000)
        edges, density = waiting_time_histogram(waits)
        assert edges.size == 101
        assert edges[-1] == pytest.approx(10.0 * waits.mean())
        mass = np.sum(density * np.diff(edges))
        assert mass == pytest.approx(1.0, abs=1e-3)

    def test_empty_waits_rejected(self):
        with pytest.raises(AnalyticsError):
            waiting_time_histogram(np.array([]))
        with pytest.raises(AnalyticsError):
            compare_exponential(np.array([]), 0.5)

    def test_two_sample_wrapper(self):
        rng = np.random.default_rng(13)
        a = rng.exponential(2.0, 3000)
        b = rng.exponential(2.0, 3000)
        assert two_sample_ks(a, b).pvalue > 0.01
