import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from catgrad.categorical import (CallableFunction, Factorisation, LogitTable, LookupFunction,
                                 SupportTooLarge, enumerate_support, exact_expectation,
                                 exact_gradient, flatten, iter_support, log_prob, marginals,
                                 random_chain, random_independent, sample_ancestral, score,
                                 softmax_row)

finite_rows = st.lists(st.floats(-50, 50), min_size=1, max_size=8)


def _tables(fact):
    return [t.tolist() for t in fact.tables]


class TestSoftmaxRow:
    @pytest.mark.parametrize("logits, expected", [
        ([0, 0, 0], [1 / 3] * 3),
        ([math.log(2), 0], [2 / 3, 1 / 3]),
        ([1000, 0], [1.0, 0.0]),
        ([-1e4, 1e4], [0.0, 1.0]),
    ])
    def test_values(self, logits, expected):
        np.testing.assert_allclose(softmax_row(logits), expected, atol=1e-12)

    @given(finite_rows, st.floats(-1e3, 1e3))
    def test_simplex_and_shift_invariance(self, row, c):
        p = softmax_row(row)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1) < 1e-12
        np.testing.assert_allclose(softmax_row(np.asarray(row) + c), p, atol=1e-12)

    def test_empty_row(self):
        with pytest.raises(ValueError, match="empty logit row"):
            softmax_row([])

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite(self, bad):
        with pytest.raises(ValueError):
            softmax_row([0.0, bad])


class TestFactorisation:
    def test_logit_table_rejects_non_finite(self):
        with pytest.raises(ValueError):
            LogitTable([[0.0, np.nan]])

    def test_chain_table_rows_must_match_parents(self):
        with pytest.raises(ValueError):
            Factorisation.chain([np.zeros((1, 2)), np.zeros((3, 2))])

    def test_probabilities_normalised(self, rng):
        fact = random_chain((2, 3, 2), rng, scale=3.0)
        for p in fact.probs:
            np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


class TestLogProb:
    def test_uniform_pair(self, frozen):
        fact = Factorisation.independent([[0, 0], [0, 0]])
        for x in [(0, 0), (0, 1), (1, 1)]:
            assert log_prob(fact, x) == pytest.approx(frozen["log_prob_uniform_2x2"], abs=1e-12)

    def test_empty_factorisation(self):
        assert log_prob(Factorisation.independent([]), []) == 0.0

    def test_deterministic_second_factor(self):
        fact = Factorisation.chain([np.zeros((1, 2)), np.array([[50.0, 0.0], [0.0, 50.0]])])
        assert log_prob(fact, (0, 0)) == pytest.approx(math.log(0.5), abs=1e-12)

    def test_out_of_range(self):
        fact = Factorisation.independent([[0, 0], [0, 0, 0]])
        with pytest.raises(ValueError):
            log_prob(fact, (0, 3))
        with pytest.raises(ValueError):
            log_prob(fact, (-1, 0))

    def test_matches_reference(self, rng):
        fact = random_chain((3, 2, 3), rng)
        for x in enumerate_support(fact.cards):
            assert log_prob(fact, x) == pytest.approx(
                math.log(oracles.prob(_tables(fact), tuple(x))), abs=1e-12)


class TestScore:
    @pytest.mark.parametrize("x, expected", [(1, [-0.5, 0.5]), (0, [0.5, -0.5])])
    def test_binary(self, x, expected):
        (g,) = score(Factorisation.independent([[0, 0]]), [x])
        np.testing.assert_allclose(g[0], expected, atol=1e-15)

    def test_rows_sum_to_zero_and_untouched_rows_zero(self, rng):
        fact = random_chain((2, 3, 2), rng)
        x = (1, 2, 0)
        g = score(fact, x)
        for d, gd in enumerate(g):
            np.testing.assert_allclose(gd.sum(axis=1), 0.0, atol=1e-12)
            touched = fact.parent_index(np.array([x]), d)[0]
            mask = np.ones(len(gd), bool)
            mask[touched] = False
            assert np.all(gd[mask] == 0)

    @pytest.mark.parametrize("chain", [False, True])
    def test_zero_mean(self, rng, chain):
        cards = (3, 2, 4)
        fact = random_chain(cards, rng) if chain else random_independent(cards, rng)
        total = flatten(fact.zeros_like_params())
        for x in enumerate_support(cards):
            total += math.exp(log_prob(fact, x)) * flatten(score(fact, x))
        np.testing.assert_allclose(total, 0.0, atol=1e-10)


class TestSampling:
    def test_degenerate(self, rng):
        x = sample_ancestral(Factorisation.independent([[50, -50]]), 1000, rng)
        assert np.all(x == 0)

    def test_uniform_frequencies(self, rng):
        x = sample_ancestral(Factorisation.independent([[0, 0, 0, 0]]), 100_000, rng)
        freq = np.bincount(x[:, 0], minlength=4) / len(x)
        np.testing.assert_allclose(freq, 0.25, atol=0.01)

    def test_deterministic_copy(self, rng):
        fact = Factorisation.chain([np.zeros((1, 3)), 60.0 * (np.eye(3) - 0.5)])
        x = sample_ancestral(fact, 500, rng)
        assert np.array_equal(x[:, 0], x[:, 1])

    def test_zero_samples(self, rng):
        with pytest.raises(ValueError):
            sample_ancestral(Factorisation.independent([[0, 0]]), 0, rng)

    def test_seed_determinism(self):
        fact = random_chain((3, 3), np.random.default_rng(1))
        a = sample_ancestral(fact, 50, np.random.default_rng(7))
        b = sample_ancestral(fact, 50, np.random.default_rng(7))
        assert np.array_equal(a, b)

    def test_marginals_within_5se(self, rng):
        fact = random_chain((3, 2, 4), rng)
        n = 100_000
        x = sample_ancestral(fact, n, rng)
        for d, m in enumerate(marginals(fact)):
            freq = np.bincount(x[:, d], minlength=len(m)) / n
            se = np.sqrt(m * (1 - m) / n)
            assert np.all(np.abs(freq - m) <= 5 * se + 1e-12)


class TestEnumeration:
    def test_row_major(self):
        got = [tuple(r) for r in enumerate_support((2, 3))]
        assert got == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]

    def test_empty_cards(self):
        assert enumerate_support(()).shape == (1, 0)

    def test_budget(self):
        with pytest.raises(SupportTooLarge, match="support too large") as err:
            enumerate_support((10,) * 8)
        assert err.value.size == 10 ** 8

    def test_chunks_cover_support(self):
        chunks = list(iter_support((3, 4, 5), chunk=7))
        assert np.array_equal(np.concatenate(chunks), enumerate_support((3, 4, 5)))


class TestExactOracle:
    def test_expectation_sum(self, frozen):
        fact = Factorisation.independent([[0, 0], [0, 0]])
        f = CallableFunction(lambda x: x.sum(axis=1).astype(float))
        assert exact_expectation(fact, f) == pytest.approx(frozen["expectation_uniform_2x2_sum"])

    def test_constant(self, rng):
        fact = random_chain((2, 3), rng)
        f = CallableFunction(lambda x: np.full(len(x), 3.5))
        assert exact_expectation(fact, f) == pytest.approx(3.5, abs=1e-12)
        assert np.all(np.abs(flatten(exact_gradient(fact, f))) < 1e-12)

    def test_point_mass(self):
        fact = Factorisation.independent([[-60, 60, -60], [60, -60]])
        f = CallableFunction(lambda x: 10.0 * x[:, 0] + x[:, 1])
        assert exact_expectation(fact, f) == pytest.approx(10.0, abs=1e-12)

    def test_gradient_sum(self, frozen):
        fact = Factorisation.independent([[0, 0], [0, 0]])
        f = CallableFunction(lambda x: x.sum(axis=1).astype(float))
        np.testing.assert_allclose(flatten(exact_gradient(fact, f)),
                                   np.ravel(frozen["exact_grad_uniform_2x2_sum"]), atol=1e-9)

    def test_gradient_single(self):
        g = exact_gradient(Factorisation.independent([[0, 0]]),
                           CallableFunction(lambda x: x[:, 0].astype(float)))
        np.testing.assert_allclose(g[0][0], [-0.25, 0.25], atol=1e-15)

    def test_budget(self):
        fact = Factorisation.independent([[0] * 10] * 8)
        with pytest.raises(SupportTooLarge):
            exact_expectation(fact, CallableFunction(lambda x: x[:, 0] * 1.0))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.booleans())
    def test_gradient_matches_finite_differences(self, seed, chain):
        rng = np.random.default_rng(seed)
        cards = tuple(int(k) for k in rng.integers(2, 4, size=rng.integers(1, 4)))
        fact = random_chain(cards, rng) if chain else random_independent(cards, rng)
        f = LookupFunction.random(cards, rng)
        table = f.table

        ref = np.array(oracles.ravel(oracles.fd_gradient(_tables(fact), lambda x: table[x])))
        got = flatten(exact_gradient(fact, f))
        assert np.all(np.abs(got - ref) <= 1e-6 * np.maximum(np.abs(ref), 1e-3))
        assert exact_expectation(fact, f) == pytest.approx(
            oracles.expectation(_tables(fact), lambda x: table[x]), abs=1e-12)
