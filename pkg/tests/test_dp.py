"""Laplace primitives, sparse vector, composition, and the MW release."""

import math

import numpy as np
import pytest

from privdual.dp import (
    PrivacyLedger,
    PrivacyParams,
    compose,
    laplace_mechanism,
    laplace_noise,
    mw_release,
    per_round_epsilon,
    sparse_vector,
    zero_noise,
)
from privdual.queries import Database, LinearQuery, Universe, evaluate, negate


def make_db(counts):
    counts = np.asarray(counts)
    return Database(Universe(size=counts.size), counts)


def make_query(values, qid="q"):
    return LinearQuery(query_id=qid, analyst_id="a", values=np.asarray(values, float))


class TestLaplaceNoise:
    def test_tail_probability(self):
        rng = np.random.default_rng(0)
        draws = np.array([laplace_noise(1.0, rng) for _ in range(1_000_000)])
        assert np.mean(np.abs(draws) > 1.0) == pytest.approx(math.exp(-1.0), abs=0.01)

    def test_variance(self):
        rng = np.random.default_rng(1)
        draws = np.array([laplace_noise(1.0, rng) for _ in range(1_000_000)])
        assert np.var(draws) == pytest.approx(2.0, abs=0.05)
        assert np.mean(draws) == pytest.approx(0.0, abs=0.01)

    def test_zero_hook(self):
        rng = np.random.default_rng(2)
        assert zero_noise(123.0, rng) == 0.0

    def test_reproducible(self):
        a = [laplace_noise(2.0, np.random.default_rng(3)) for _ in range(10)]
        b = [laplace_noise(2.0, np.random.default_rng(3)) for _ in range(10)]
        assert a == b


class TestLaplaceMechanism:
    def test_scale_arithmetic(self):
        # Delta=0.001, |F|=1, delta=e^-1, eps=1 gives b = 0.001 * sqrt(8).
        db = make_db([1, 1])
        params = PrivacyParams(1.0, math.exp(-1.0))
        answers = laplace_mechanism(db, [make_query([1.0, 0.0])], 0.001, params,
                                    np.random.default_rng(0))
        assert answers[0].noise_scale == pytest.approx(0.001 * math.sqrt(8.0))

    def test_zero_noise_equals_truth(self):
        db = make_db([3, 1])
        qs = [make_query([1.0, 0.0], "q0"), make_query([0.5, 0.5], "q1")]
        params = PrivacyParams(1.0, 1e-6)
        answers = laplace_mechanism(db, qs, 1 / db.n, params,
                                    np.random.default_rng(0), noise=zero_noise)
        assert answers[0].value == pytest.approx(0.75)
        assert answers[1].value == pytest.approx(0.5)

    def test_accuracy_bound(self):
        # Max error over F at most b * ln(|F|/beta) in at least 95% of trials.
        # The analytic hit rate is (1 - beta/|F|)^|F| ~ 95.1%, so this sits
        # at the binomial knife edge; the seed family is fixed.
        db = make_db([2, 2, 2, 2])
        qs = [make_query(np.eye(4)[i], f"q{i}") for i in range(4)]
        params = PrivacyParams(1.0, 1e-3, beta=0.05)
        scale = (1 / db.n) * math.sqrt(8 * 4 * math.log(1e3))
        bound = scale * math.log(len(qs) / params.beta)
        hits = 0
        for seed in range(200):
            rng = np.random.default_rng([40, seed])
            answers = laplace_mechanism(db, qs, 1 / db.n, params, rng)
            err = max(abs(a.value - evaluate(q, db)) for a, q in zip(answers, qs))
            hits += err <= bound
        assert hits >= 190

    def test_exchangeable_across_equal_queries(self):
        # Two queries with the same true answer should have indistinguishable
        # answer distributions (two-sample KS at desk scale).
        db = make_db([2, 2])
        qs = [make_query([1.0, 0.0], "q0"), make_query([0.0, 1.0], "q1")]
        params = PrivacyParams(1.0, 1e-3)
        first, second = [], []
        for seed in range(4000):
            answers = laplace_mechanism(db, qs, 1 / db.n, params,
                                        np.random.default_rng([5, seed]))
            first.append(answers[0].value)
            second.append(answers[1].value)
        a = np.sort(first)
        b = np.sort(second)
        grid = np.concatenate([a, b])
        cdf_a = np.searchsorted(a, grid, side="right") / a.size
        cdf_b = np.searchsorted(b, grid, side="right") / b.size
        ks = np.abs(cdf_a - cdf_b).max()
        # 1% critical value for n = m = 4000
        assert ks <= 1.63 * math.sqrt(2 / 4000)

    def test_empty_queries_rejected(self):
        with pytest.raises(ValueError):
            laplace_mechanism(make_db([1]), [], 0.1, PrivacyParams(1, 1e-6),
                              np.random.default_rng(0))

    def test_ledger_event(self):
        ledger = PrivacyLedger()
        laplace_mechanism(make_db([1, 1]), [make_query([1, 0])], 0.5,
                          PrivacyParams(0.7, 1e-6), np.random.default_rng(0),
                          ledger=ledger)
        assert ledger.total() == (pytest.approx(0.7), pytest.approx(1e-6))


class TestSparseVector:
    def test_all_low_returns_empty(self):
        # Wide margin vs noise: sensitivity 1e-4 keeps the noise scales far
        # below the 0.5 threshold gap.
        db = make_db([5000, 5000])
        funcs = [lambda d: 0.0 for _ in range(20)]
        params = PrivacyParams(1.0, 1e-6, beta=0.05)
        misses = 0
        for seed in range(50):
            out = sparse_vector(db, funcs, alpha=0.5, k=2, sensitivity=1 / db.n,
                                params=params, rng=np.random.default_rng([6, seed]))
            misses += bool(out.indices)
        assert misses <= 2

    def test_single_planted_found(self):
        db = make_db([5000, 5000])
        funcs = [lambda d: 0.0 for _ in range(9)] + [lambda d: 1.0]
        params = PrivacyParams(1.0, 1e-6, beta=0.05)
        wrong = 0
        for seed in range(50):
            out = sparse_vector(db, funcs, alpha=0.5, k=1, sensitivity=1 / db.n,
                                params=params, rng=np.random.default_rng([7, seed]))
            wrong += out.index_set != {9}
        assert wrong <= 2

    def test_zero_budget_with_promise(self):
        db = make_db([10, 10])
        out = sparse_vector(db, [lambda d: 0.0] * 5, alpha=0.5, k=0,
                            sensitivity=0.1, params=PrivacyParams(1, 1e-6),
                            rng=np.random.default_rng(8))
        assert out.indices == []
        assert not out.budget_violated

    def test_negative_budget_rejected(self):
        with pytest.raises(ValueError):
            sparse_vector(make_db([1]), [lambda d: 0.0], alpha=0.5, k=-1,
                          sensitivity=0.1, params=PrivacyParams(1, 1e-6),
                          rng=np.random.default_rng(0))

    def test_budget_violation_flagged(self):
        db = make_db([10, 10])
        out = sparse_vector(db, [lambda d: 1.0] * 5, alpha=0.2, k=1,
                            sensitivity=1e-4, params=PrivacyParams(1, 1e-6),
                            rng=np.random.default_rng(9))
        assert out.budget_violated
        assert len(out.indices) == 5

    def test_decisions_read_only_own_function(self):
        # Query privacy structure: the decision for index i consumes f_i only.
        db = make_db([5, 5])
        funcs = [lambda d, i=i: 0.1 * i for i in range(8)]
        out = sparse_vector(db, funcs, alpha=0.4, k=3, sensitivity=1 / db.n,
                            params=PrivacyParams(1, 1e-6),
                            rng=np.random.default_rng(10))
        assert out.decision_inputs == [{i} for i in range(8)]

    def test_exact_with_zero_noise(self):
        db = make_db([5, 5])
        funcs = [lambda d, i=i: 0.1 * i for i in range(8)]
        out = sparse_vector(db, funcs, alpha=0.45, k=8, sensitivity=1 / db.n,
                            params=PrivacyParams(1, 1e-6),
                            rng=np.random.default_rng(11), noise=zero_noise)
        assert out.index_set == {5, 6, 7}


class TestCompose:
    def test_zero_epsilon(self):
        eps, delta = compose(0.0, 0.0, 100, 1e-6)
        assert eps == 0.0
        assert delta == pytest.approx(1e-6)

    def test_arithmetic_hundred_rounds(self):
        eps, delta = compose(0.01, 0.0, 100, 1e-6)
        assert eps == pytest.approx(
            0.01 * math.sqrt(800 * math.log(1e6)) + 2e-4 * 100, rel=1e-9
        )
        assert eps == pytest.approx(1.0713, abs=5e-4)
        assert delta == pytest.approx(1e-6)

    def test_arithmetic_single_round(self):
        eps, _ = compose(0.1, 0.0, 1, math.exp(-1.0))
        assert eps == pytest.approx(0.1 * math.sqrt(8.0) + 0.02, rel=1e-12)
        assert eps == pytest.approx(0.3028, abs=5e-5)

    def test_monotone_in_count_and_epsilon(self):
        base, _ = compose(0.05, 0.0, 50, 1e-6)
        more_rounds, _ = compose(0.05, 0.0, 51, 1e-6)
        more_eps, _ = compose(0.06, 0.0, 50, 1e-6)
        assert more_rounds >= base
        assert more_eps >= base

    def test_large_epsilon0_rejected(self):
        with pytest.raises(ValueError):
            compose(0.6, 0.0, 10, 1e-6)

    def test_delta_accumulates(self):
        _, delta = compose(0.01, 1e-9, 100, 1e-6)
        assert delta == pytest.approx(100e-9 + 1e-6)

    def test_per_round_epsilon_inverts_leading_term(self):
        eps0 = per_round_epsilon(1.0, 200, 1e-6)
        total, _ = compose(eps0, 0.0, 200, 1e-6)
        assert total == pytest.approx(1.0 + 2 * eps0 * eps0 * 200, rel=1e-12)


class TestMWRelease:
    def test_constant_query(self):
        db = make_db([4, 4])
        q = make_query([0.5, 0.5])
        answers = mw_release(db, [q], PrivacyParams(1.0, 1e-6),
                             np.random.default_rng(12))
        assert answers[0].value == pytest.approx(0.5, abs=1e-9)

    def test_zero_noise_convergence(self):
        # With the noise hook forced to zero and generous rounds, answers
        # converge to the exact truth.
        db = make_db([50, 10, 30, 10])
        q = make_query([1.0, 0.0, 1.0, 0.5])
        qs = [q, negate(q)]
        answers = mw_release(db, qs, PrivacyParams(1.0, 1e-6),
                             np.random.default_rng(13), noise=zero_noise,
                             rounds=20_000, eta=0.05)
        for ans, query in zip(answers, qs):
            assert abs(ans.value - evaluate(query, db)) <= 1e-3

    def test_negation_pair_bracket(self):
        # q(D) = 0.5 at n=1000, |X|=64: both answers within [0.35, 0.65] in
        # at least 90% of 50 trials.
        rng = np.random.default_rng(14)
        counts = np.zeros(64, dtype=np.int64)
        counts[:32] = np.diff(np.linspace(0, 500, 33).astype(int))
        counts[32:] = np.diff(np.linspace(0, 500, 33).astype(int))
        db = make_db(counts)
        q = make_query(np.repeat([1.0, 0.0], 32))
        qs = [q, negate(q)]
        assert evaluate(q, db) == pytest.approx(0.5, abs=0.01)
        hits = 0
        for seed in range(50):
            answers = mw_release(db, qs, PrivacyParams(1.0, 1e-6),
                                 np.random.default_rng([15, seed]))
            hits += all(0.35 <= a.value <= 0.65 for a in answers)
        assert hits >= 45

    def test_reproducible(self):
        db = make_db([3, 5, 2])
        qs = [make_query([1, 0, 0], "q0"), make_query([0, 1, 1], "q1")]
        a = mw_release(db, qs, PrivacyParams(1, 1e-6), np.random.default_rng(16))
        b = mw_release(db, qs, PrivacyParams(1, 1e-6), np.random.default_rng(16))
        assert [x.value for x in a] == [x.value for x in b]


class TestLedgerAndParams:
    def test_param_validation(self):
        with pytest.raises(ValueError):
            PrivacyParams(0.0, 1e-6)
        with pytest.raises(ValueError):
            PrivacyParams(11.0, 1e-6)
        with pytest.raises(ValueError):
            PrivacyParams(1.0, 1.5)
        with pytest.raises(ValueError):
            PrivacyParams(1.0, 1e-6, beta=0.0)

    def test_split(self):
        p = PrivacyParams(0.9, 3e-6).split(3)
        assert p.epsilon == pytest.approx(0.3)
        assert p.delta == pytest.approx(1e-6)

    def test_ledger_totals_and_json(self):
        ledger = PrivacyLedger()
        ledger.record("a", 0.1, 1e-7)
        ledger.record("b", 0.2, 2e-7, count=2)
        eps, delta = ledger.total()
        assert eps == pytest.approx(0.5)
        assert delta == pytest.approx(5e-7)
        blob = ledger.to_json()
        assert blob["total_epsilon"] == pytest.approx(0.5)
        assert len(blob["events"]) == 2
