"""Measure operations: updates, projection, sampling, distances."""

import math

import numpy as np
import pytest

from privdual.measures import (
    Distribution,
    LossVector,
    Measure,
    mw_update,
    project_density,
    project_log_weights,
    sample,
    statistical_distance,
    uniform_measure,
)


def oracle_project(weights: np.ndarray, s: float) -> np.ndarray:
    """Independent scalar-search oracle: bisect c until sum min(1, c*w) = s."""
    lo, hi = 0.0, 1.0
    while np.minimum(1.0, hi * weights).sum() < s:
        hi *= 2.0
    for _ in range(10_000):
        mid = 0.5 * (lo + hi)
        if np.minimum(1.0, mid * weights).sum() < s:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * max(hi, 1.0):
            break
    return np.minimum(1.0, hi * weights)


class TestUniformMeasure:
    def test_quarter_weights(self):
        m = uniform_measure(4, 1.0)
        assert np.allclose(m.weights, 0.25)
        assert m.density == pytest.approx(1.0)

    def test_single_action(self):
        assert uniform_measure(1, 1.0).weights[0] == pytest.approx(1.0)

    def test_density_spread(self):
        assert np.allclose(uniform_measure(3, 6.0).weights, 2.0)

    def test_zero_action_count_rejected(self):
        with pytest.raises(ValueError):
            uniform_measure(0, 1.0)


class TestMWUpdate:
    def test_zero_losses_identity(self):
        m = Measure(np.array([0.3, 0.7, 0.1]))
        out = mw_update(m, np.zeros(3), eta=0.5)
        assert np.allclose(out.weights, m.weights)

    def test_direct_formula(self):
        out = mw_update(Measure(np.array([1.0, 1.0])), np.array([0.0, 1.0]),
                        eta=math.log(2.0))
        assert np.allclose(out.weights, [1.0, 0.5])

    def test_update_composition(self):
        # Two updates with L1 then L2 equal one update with L1 + L2... when
        # L1 + L2 stays a valid loss vector; checked entrywise by brute force.
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = rng.integers(2, 20)
            w = rng.random(n) + 0.01
            l1 = rng.random(n) * 0.5
            l2 = rng.random(n) * 0.5
            eta = rng.random() * 2 + 0.01
            two_step = mw_update(mw_update(Measure(w), l1, eta), l2, eta).weights
            combined = mw_update(Measure(w), l1 + l2, eta).weights
            expected = np.array(
                [w[i] * math.exp(-eta * (l1[i] + l2[i])) for i in range(n)]
            )
            assert np.allclose(two_step, combined)
            assert np.allclose(two_step, expected)

    def test_density_never_increases(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            m = Measure(rng.random(8))
            out = mw_update(m, rng.random(8), eta=0.3)
            assert out.density <= m.density + 1e-12
            assert np.all(out.weights <= m.weights + 1e-12)

    def test_loss_out_of_range_rejected(self):
        m = Measure(np.array([1.0, 1.0]))
        with pytest.raises(ValueError):
            mw_update(m, np.array([0.0, 1.5]), eta=0.1)
        with pytest.raises(ValueError):
            mw_update(m, np.array([-0.1, 0.5]), eta=0.1)

    def test_loss_vector_type_accepted(self):
        m = Measure(np.array([1.0, 2.0]))
        out = mw_update(m, LossVector(np.array([0.5, 0.5])), eta=1.0)
        assert np.allclose(out.weights, m.weights * math.exp(-0.5))


class TestProjection:
    def test_uniform_doubling(self):
        m = Measure(np.full(4, 0.25))
        out = project_density(m, 2.0)
        expected = oracle_project(m.weights, 2.0)
        assert np.allclose(out.weights, expected)
        assert np.allclose(out.weights, 0.5)

    def test_cap_binds_on_largest(self):
        m = Measure(np.array([0.9, 0.1, 0.1]))
        out = project_density(m, 2.0)
        expected = oracle_project(m.weights, 2.0)
        assert np.allclose(out.weights, expected, atol=1e-9)
        assert np.allclose(out.weights, [1.0, 0.5, 0.5])  # c = 5

    def test_identity_when_density_matches(self):
        m = Measure(np.array([0.5, 0.7, 0.8]))
        out = project_density(m, 2.0)
        assert np.allclose(out.weights, m.weights)

    def test_exactness_random(self):
        # Any positive scaling factor is allowed, so s may sit below the
        # input density (deflation) as well as above it.
        rng = np.random.default_rng(2)
        for _ in range(200):
            n = int(rng.integers(2, 64))
            w = rng.random(n) * rng.choice([0.1, 1.0, 10.0])
            m = Measure(w + 1e-6)
            s = rng.uniform(0.01, n)
            out = project_density(m, s)
            assert out.density == pytest.approx(s, abs=1e-9)
            assert np.all(out.weights <= 1.0 + 1e-12)
            assert np.allclose(out.weights, oracle_project(m.weights, s), atol=1e-8)

    def test_order_preservation(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            w = rng.random(16) + 1e-3
            out = project_density(Measure(w), 8.0).weights
            order = np.argsort(w)
            assert np.all(np.diff(out[order]) >= -1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            w = rng.random(12) + 1e-3
            gamma = rng.uniform(0.01, 100.0)
            a = project_density(Measure(w), 5.0).weights
            b = project_density(Measure(gamma * w), 5.0).weights
            assert np.allclose(a, b, atol=1e-9)

    def test_log_domain_projection(self):
        rng = np.random.default_rng(5)
        log_w = rng.normal(size=10) - 500.0  # far underflowed in linear domain
        out = project_log_weights(log_w, 4.0)
        assert out.sum() == pytest.approx(4.0, abs=1e-9)
        direct = oracle_project(np.exp(log_w - log_w.max()), 4.0)
        assert np.allclose(out, direct, atol=1e-9)

    def test_density_above_action_count_rejected(self):
        with pytest.raises(ValueError):
            project_density(Measure(np.array([0.5, 0.5])), 3.0)

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            project_density(Measure(np.zeros(3)), 1.0)

    def test_density_above_support_rejected(self):
        with pytest.raises(ValueError):
            project_density(Measure(np.array([0.5, 0.0, 0.5])), 2.5)

    def test_projection_privacy_bound(self):
        # Adjacent measures with per-entry log-ratio <= eps project to
        # measures with log-ratio <= 2 eps.
        rng = np.random.default_rng(6)
        for eps in (0.01, 0.1, 0.5):
            for _ in range(100):
                n = int(rng.integers(3, 40))
                a0 = rng.random(n) + 1e-3
                a1 = a0 * np.exp(rng.uniform(-eps, eps, size=n))
                hi = max(a0.sum(), a1.sum())
                s = rng.uniform(hi, max(hi, 0.95 * n)) if hi < 0.95 * n else hi
                p0 = project_density(Measure(a0), s).weights
                p1 = project_density(Measure(a1), s).weights
                ratio = np.abs(np.log(p0 / p1))
                assert ratio.max() <= 2 * eps + 1e-9

    def test_projection_extra_action_distance(self):
        # Adding one extra action of weight in (0, 1] moves the projected
        # distribution by at most 1/s in total variation.
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(4, 40))
            a0 = rng.random(n) + 1e-3
            extra = rng.uniform(1e-6, 1.0)
            a1 = np.concatenate([a0, [extra]])
            s = rng.uniform(max(a1.sum(), 1.0), n - 0.01)
            p0 = project_density(Measure(a0), s).weights
            p1 = project_density(Measure(a1), s).weights
            sd = statistical_distance(p0 / p0.sum(), p1 / p1.sum())
            assert sd <= 1.0 / s + 1e-9


class TestSampling:
    def test_support_of_one(self):
        rng = np.random.default_rng(8)
        m = Measure(np.array([0.0, 1.0]))
        assert all(sample(m, rng) == 1 for _ in range(100))

    def test_even_frequencies(self):
        rng = np.random.default_rng(9)
        draws = np.array([sample(Measure(np.array([1.0, 1.0])), rng)
                          for _ in range(100_000)])
        assert np.mean(draws == 0) == pytest.approx(0.5, abs=0.01)

    def test_three_to_one_frequencies(self):
        rng = np.random.default_rng(10)
        draws = np.array([sample(Measure(np.array([3.0, 1.0])), rng)
                          for _ in range(100_000)])
        assert np.mean(draws == 0) == pytest.approx(0.75, abs=0.01)

    def test_zero_measure_rejected(self):
        with pytest.raises(ValueError):
            sample(Measure(np.zeros(2)), np.random.default_rng(0))

    def test_deterministic_given_state(self):
        m = Measure(np.array([0.2, 0.5, 0.3]))
        a = [sample(m, np.random.default_rng(11)) for _ in range(20)]
        b = [sample(m, np.random.default_rng(11)) for _ in range(20)]
        assert a == b


class TestStatisticalDistance:
    def test_identity(self):
        assert statistical_distance(np.array([0.3, 0.7]), np.array([0.3, 0.7])) == 0.0

    def test_direct_sum(self):
        assert statistical_distance(
            np.array([0.5, 0.5]), np.array([0.25, 0.75])
        ) == pytest.approx(0.25)

    def test_disjoint_supports(self):
        assert statistical_distance(
            np.array([1.0, 0.0]), np.array([0.0, 1.0])
        ) == pytest.approx(1.0)

    def test_padding_shorter_side(self):
        assert statistical_distance(
            np.array([1.0]), np.array([0.5, 0.5])
        ) == pytest.approx(0.5)

    def test_distribution_objects(self):
        p = Distribution(np.array([0.5, 0.5]))
        q = Distribution(np.array([0.25, 0.75]))
        assert statistical_distance(p, q) == pytest.approx(0.25)


class TestTypes:
    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            Measure(np.array([0.5, -0.1]))

    def test_distribution_sums_to_one(self):
        with pytest.raises(ValueError):
            Distribution(np.array([0.5, 0.6]))

    def test_measure_immutable(self):
        m = Measure(np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            m.weights[0] = 5.0
