import itertools
import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gwfam as g
from gwfam.errors import (
    EnumerationTooLarge,
    InvalidSampleSize,
    SampleExceedsPopulation,
)
from gwfam.sampling import SampleSizeRule, _distinct_uniform_indices
from gwfam.simulate import SeedSpec


def brute_force_prob_distinct(sizes, r) -> Fraction:
    total = sum(sizes)
    if r > total:
        raise ValueError
    numer = sum(
        math.prod(combo) for combo in itertools.combinations(sizes, r)
    )
    return Fraction(numer, math.comb(total, r))


class TestDrawFamilySample:
    def test_census_reports_each_family_with_multiplicity(self, mitosis88):
        stream = g.materialize_families(mitosis88, (2, 1), SeedSpec(5))
        sample = g.draw_family_sample(stream, 6, SeedSpec(5))
        parents = Counter(zip(sample.parent_types.tolist(), sample.parent_indices.tolist()))
        assert sum(parents.values()) == 6
        assert set(parents.values()) == {2}  # every mitosis family has two members
        assert not g.is_non_sibling(sample)

    def test_exhaustive_two_family_case(self):
        model = g.branching_model(
            [g.offspring_law([((1, 1), 1.0)]), g.offspring_law([((2, 0), 1.0)])]
        )
        stream = g.materialize_families(model, (1, 1), SeedSpec(6))
        sample = g.draw_family_sample(stream, 4, SeedSpec(6))
        broods = Counter(tuple(b) for b in sample.broods.tolist())
        assert broods == {(1, 1): 2, (2, 0): 2}

    def test_sample_too_large(self, mitosis88):
        stream = g.materialize_families(mitosis88, (1, 1), SeedSpec(7))
        with pytest.raises(SampleExceedsPopulation):
            g.draw_family_sample(stream, 5, SeedSpec(7))

    def test_selection_is_uniform(self, mitosis88):
        # 4 children; every 2-subset should appear with frequency 1/6
        model = g.branching_model(
            [g.offspring_law([((1, 1), 1.0)]), g.offspring_law([((2, 0), 1.0)])]
        )
        reps = 6000
        counts = Counter()
        stream = g.materialize_families(model, (1, 1), SeedSpec(8))
        for k in range(reps):
            s = g.draw_family_sample(stream, 2, SeedSpec(8, replicate=k))
            key = tuple(sorted(zip(s.parent_types.tolist(), s.parent_indices.tolist())))
            counts[key] += 1
        # pairs of (family, family): (0,0)x2 -> within family 0; etc.
        expected = {
            ((0, 0), (0, 0)): 1 / 6,
            ((1, 0), (1, 0)): 1 / 6,
            ((0, 0), (1, 0)): 4 / 6,
        }
        for key, p in expected.items():
            sd = math.sqrt(p * (1 - p) / reps)
            assert abs(counts[key] / reps - p) <= 4 * sd

    def test_floyd_indices_distinct_and_in_range(self):
        rng = np.random.default_rng(0)
        for n, r in [(10, 10), (100, 7), (2**21, 400)]:
            idx = _distinct_uniform_indices(rng, n, r)
            assert len(idx) == r
            assert len(set(idx.tolist())) == r
            assert idx.min() >= 0 and idx.max() < n
            assert (np.diff(idx) > 0).all()

    def test_matches_pair_oracle_at_small_scale(self, mitosis88):
        # frequency of (X1, X2) both equal (1,1) vs the exact two-individual law
        z_prev = (1, 1)
        oracle = g.pair_pmf_exact(mitosis88, z_prev)
        target = oracle.prob_of((1, 1), (1, 1))
        reps = 20_000
        hits = 0
        for k in range(reps):
            seed = SeedSpec(77, replicate=k)
            stream = g.materialize_families(mitosis88, z_prev, seed)
            s = g.draw_family_sample(stream, 2, seed)
            if tuple(s.broods[0]) == (1, 1) and tuple(s.broods[1]) == (1, 1):
                hits += 1
        sd = math.sqrt(target * (1 - target) / reps)
        assert abs(hits / reps - target) <= 4 * sd


class TestIsNonSibling:
    def test_distinct_parents(self):
        sample = g.FamilySample(
            broods=np.array([[1, 1], [2, 0]]),
            parent_types=np.array([0, 1]),
            parent_indices=np.array([0, 0]),
            generation=1,
            population_total=4,
        )
        assert g.is_non_sibling(sample)

    def test_shared_parent(self):
        sample = g.FamilySample(
            broods=np.array([[1, 1], [1, 1]]),
            parent_types=np.array([0, 0]),
            parent_indices=np.array([0, 0]),
            generation=1,
            population_total=4,
        )
        assert not g.is_non_sibling(sample)


class TestProbDistinctExact:
    def test_spot_values(self):
        assert g.prob_distinct_exact([2, 1, 3], 2) == Fraction(11, 15)
        assert g.prob_distinct_exact([1, 1, 1], 3) == 1
        assert g.prob_distinct_exact([3], 2) == 0
        assert g.prob_distinct_exact([2, 2], 2) == Fraction(2, 3)

    def test_r_at_most_one(self):
        assert g.prob_distinct_exact([5, 2], 0) == 1
        assert g.prob_distinct_exact([5, 2], 1) == 1

    def test_invalid_r(self):
        with pytest.raises(InvalidSampleSize):
            g.prob_distinct_exact([2, 2], 5)
        with pytest.raises(InvalidSampleSize):
            g.prob_distinct_exact([2, 2], -1)

    def test_accepts_size_counts(self):
        assert g.prob_distinct_exact({2: 8}, 2) == Fraction(14, 15)

    @given(
        st.lists(st.integers(1, 4), min_size=1, max_size=8),
        st.integers(0, 4),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_bruteforce(self, sizes, r):
        if r > sum(sizes):
            return
        assert g.prob_distinct_exact(sizes, r) == brute_force_prob_distinct(sizes, r)

    @given(st.lists(st.integers(1, 5), min_size=2, max_size=8))
    @settings(max_examples=100, deadline=None)
    def test_monotone_nonincreasing_in_r(self, sizes):
        values = [g.prob_distinct_exact(sizes, r) for r in range(sum(sizes) + 1)]
        assert values[0] == values[1] == 1
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_elementary_symmetric_dp_agrees_with_grouped_path(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            sizes = rng.integers(1, 6, size=rng.integers(1, 10)).tolist()
            r = int(rng.integers(0, len(sizes) + 1))
            e_dp = g.elementary_symmetric(sizes, r)
            total = sum(sizes)
            if r <= total:
                assert g.prob_distinct_exact(sizes, r) == Fraction(
                    e_dp, math.comb(total, r)
                )


class TestEstimateProbDistinct:
    def test_mitosis_depth_three_exact(self, mitosis88):
        # 8 families of two children: zero Monte Carlo variance
        res = g.estimate_prob_distinct(
            mitosis88, (1, 1), 3, SampleSizeRule(kind="fixed", size=2), 5, SeedSpec(2)
        )
        assert res.estimate == pytest.approx(14.0 / 15.0, abs=1e-15)
        assert res.ci[1] - res.ci[0] <= 1e-12
        assert res.r == 2

    def test_r_one_is_certain(self, rds):
        res = g.estimate_prob_distinct(
            rds, (1, 1, 1, 1), 3, SampleSizeRule(kind="fixed", size=1), 3, SeedSpec(3)
        )
        assert res.estimate == 1.0

    def test_trend_toward_one(self, mitosis88):
        rule = SampleSizeRule()  # r_n = n^2
        estimates = []
        for n in (8, 10, 12, 14):
            res = g.estimate_prob_distinct(mitosis88, (1, 1), n, rule, 2, SeedSpec(4))
            estimates.append(res.estimate)
            lower = 1.0 - rule.sample_size(n) ** 2 / 2.0**n
            assert res.estimate >= lower
        assert all(a < b for a, b in zip(estimates, estimates[1:]))

    def test_indicator_frequency_consistent_with_exact(self, rds):
        # Monte Carlo of the 0/1 indicator vs the conditional-exact average
        n, r, reps = 6, 30, 150
        rule = SampleSizeRule(kind="fixed", size=r)
        res = g.estimate_prob_distinct(rds, (1, 1, 1, 1), n, rule, reps, SeedSpec(5))
        hits = 0
        for k in range(reps):
            seed = SeedSpec(5, replicate=k)
            trace = g.simulate_aggregate(rds, (1, 1, 1, 1), n, seed)
            sample = g.draw_family_sample(g.sampling_view(trace), r, seed)
            hits += g.is_non_sibling(sample)
        freq = hits / reps
        sigma = math.sqrt(max(res.estimate * (1 - res.estimate), 1e-4) / reps)
        assert abs(freq - res.estimate) <= 4 * sigma

    def test_rate_diagnostic_uses_half_max_alpha(self, mitosis88):
        rule = SampleSizeRule()
        res = g.estimate_prob_distinct(mitosis88, (1, 1), 8, rule, 2, SeedSpec(6))
        assert res.alpha == pytest.approx(0.5)  # max_alpha = 1 for mitosis
        expected = 2.0 ** (0.5 * 8) / rule.sample_size(8) ** 2 * (1.0 - res.estimate)
        assert res.rate_diagnostic == pytest.approx(expected, rel=1e-12)
        assert res.validity == pytest.approx(64.0**2 / 2.0**8)


class TestSampleSizeRule:
    def test_polynomial_default(self):
        rule = SampleSizeRule()
        assert rule.sample_size(20) == 400

    def test_fixed(self):
        assert SampleSizeRule(kind="fixed", size=7).sample_size(99) == 7

    def test_custom(self):
        rule = SampleSizeRule(kind="custom", fn=lambda n: 3 * n)
        assert rule.sample_size(5) == 15

    def test_rejects_nonpositive(self):
        with pytest.raises(InvalidSampleSize):
            SampleSizeRule(kind="fixed", size=0).sample_size(4)

    def test_round_trip(self):
        rule = SampleSizeRule(kind="polynomial", exponent=1.5)
        assert SampleSizeRule.from_dict(rule.to_dict()) == rule


class TestPairPmf:
    def test_normalized_and_symmetric(self, mitosis88):
        table = g.pair_pmf_exact(mitosis88, (1, 1))
        assert table.total_mass() == pytest.approx(1.0, abs=1e-12)
        assert np.abs(table.table - table.table.T).max() <= 1e-12

    def test_matches_closed_form(self, mitosis88):
        for z_prev in [(1, 1), (2, 0), (2, 1)]:
            enum = g.pair_pmf_exact(mitosis88, z_prev)
            formula = g.pair_pmf_closed_form(mitosis88, z_prev)
            assert np.abs(enum.table - formula.table).max() <= 1e-10

    def test_same_family_term_is_load_bearing(self, mitosis88):
        enum = g.pair_pmf_exact(mitosis88, (2, 0))
        broken = g.pair_pmf_closed_form(mitosis88, (2, 0), include_same_family=False)
        assert np.abs(enum.table - broken.table).max() > 1e-3

    def test_diagonal_carries_same_family_mass(self, mitosis88):
        # single size-2 family: sampling two individuals always yields u = v
        table = g.pair_pmf_exact(mitosis88, (1, 0))
        off_diag = table.table - np.diag(np.diag(table.table))
        assert np.abs(off_diag).max() == 0.0
        assert table.total_mass() == pytest.approx(1.0, abs=1e-12)

    def test_enumeration_guard(self, mitosis88):
        with pytest.raises(EnumerationTooLarge):
            g.pair_pmf_exact(mitosis88, (9, 0))

    def test_random_model_agreement(self):
        rng = np.random.default_rng(23)
        from tests_support import random_small_model

        for _ in range(10):
            model = random_small_model(rng)
            z_prev = tuple(int(x) for x in rng.integers(0, 3, size=model.n_types))
            if sum(z_prev) < 1 or sum(z_prev) > 5:
                continue
            enum = g.pair_pmf_exact(model, z_prev)
            formula = g.pair_pmf_closed_form(model, z_prev)
            assert np.abs(enum.table - formula.table).max() <= 1e-10


class TestEmpiricalTv:
    def _sample_of(self, broods):
        arr = np.array(broods)
        return g.FamilySample(
            broods=arr,
            parent_types=np.zeros(len(broods), dtype=np.int64),
            parent_indices=np.arange(len(broods), dtype=np.int64),
            generation=1,
            population_total=100,
        )

    def test_exact_match_gives_zero(self, mitosis88):
        pair = g.perron(g.reproduction_matrix(mitosis88))
        ps = g.size_biased_pmf(mitosis88, pair)
        # empirical distribution exactly 0.34 / 0.32 / 0.34 over 50 draws
        broods = [(2, 0)] * 17 + [(1, 1)] * 16 + [(0, 2)] * 17
        tv_m, _ = g.empirical_tv_to_limit([self._sample_of(broods)], ps)
        assert tv_m == pytest.approx(0.0, abs=1e-12)

    def test_disjoint_support_gives_one(self, mitosis88):
        pair = g.perron(g.reproduction_matrix(mitosis88))
        ps = g.size_biased_pmf(mitosis88, pair)
        tv_m, _ = g.empirical_tv_to_limit([self._sample_of([(5, 5)] * 10)], ps)
        assert tv_m == pytest.approx(1.0, abs=1e-12)

    def test_pair_tv_nan_without_pairs(self, mitosis88):
        pair = g.perron(g.reproduction_matrix(mitosis88))
        ps = g.size_biased_pmf(mitosis88, pair)
        tv_m, tv_p = g.empirical_tv_to_limit([self._sample_of([(1, 1)])], ps)
        assert math.isnan(tv_p)
