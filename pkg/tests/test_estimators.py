import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gwfam as g
from gwfam.errors import EmptySample
from gwfam.estimators import _normal_quantile
from gwfam.simulate import SeedSpec
from gwfam.spectral import AsymptoticVariances


def mitosis_family(theta):
    return g.mitosis_model(theta[0], theta[1])


MITOSIS_BOUNDS = ((1e-6, 1.0 - 1e-6), (1e-6, 1.0 - 1e-6))


def counts_to_broods(n1, nb, n2):
    return np.array([(2, 0)] * n1 + [(1, 1)] * nb + [(0, 2)] * n2, dtype=np.int64)


class TestMomEstimates:
    def test_hand_arithmetic(self):
        est = g.mom_estimates(np.array([[2, 0], [1, 1], [0, 2], [1, 1]]))
        assert est.inv_size_mean == pytest.approx(0.5)
        assert est.rho_hat == pytest.approx(2.0)
        assert est.ratio_means == pytest.approx(np.array([0.5, 0.5]))

    def test_mitosis_inv_size_constant(self):
        est = g.mom_estimates(counts_to_broods(3, 5, 2))
        assert est.inv_size_mean == 0.5

    def test_single_observation(self):
        est = g.mom_estimates(np.array([[3, 1]]))
        assert est.rho_hat == pytest.approx(4.0)
        assert est.ratio_means == pytest.approx(np.array([0.75, 0.25]))

    def test_empty_rejected(self):
        with pytest.raises(EmptySample):
            g.mom_estimates(np.zeros((0, 2), dtype=int))

    @given(
        st.lists(
            st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 5)).filter(
                lambda v: sum(v) > 0
            ),
            min_size=1,
            max_size=40,
        )
    )
    @settings(max_examples=80, deadline=None)
    def test_ratio_means_on_simplex(self, rows):
        est = g.mom_estimates(np.array(rows))
        assert float(est.ratio_means.sum()) == pytest.approx(1.0, abs=1e-12)
        assert (est.ratio_means >= 0).all()
        assert 0.0 < est.inv_size_mean <= 1.0
        assert est.rho_hat >= 1.0


class TestMomConfidence:
    def test_normal_quantile(self):
        assert _normal_quantile(0.95) == pytest.approx(1.959964, abs=1e-6)
        assert _normal_quantile(0.99) == pytest.approx(2.575829, abs=1e-6)

    def test_degenerate_rho_interval(self, mitosis88):
        pair = g.perron(g.reproduction_matrix(mitosis88))
        var = g.asymptotic_variances(mitosis88, pair)
        est = g.mom_confidence(g.mom_estimates(counts_to_broods(10, 20, 10)), var)
        assert est.rho_ci_degenerate
        assert est.ci_rho == (est.rho_hat, est.rho_hat)
        # proportion intervals stay real
        assert est.ci_b[0, 0] < est.ratio_means[0] < est.ci_b[0, 1]

    def test_b1_half_width_at_r400(self, mitosis88):
        pair = g.perron(g.reproduction_matrix(mitosis88))
        var = g.asymptotic_variances(mitosis88, pair)
        est = g.mom_confidence(g.mom_estimates(counts_to_broods(136, 128, 136)), var, 0.95)
        half = (est.ci_b[0, 1] - est.ci_b[0, 0]) / 2
        assert half == pytest.approx(1.959964 * 0.020616, abs=1e-4)

    def test_rho_interval_with_real_variance(self, rds):
        pair = g.perron(g.reproduction_matrix(rds))
        var = g.asymptotic_variances(rds, pair)
        rng = np.random.default_rng(1)
        ps = g.size_biased_pmf(rds, pair)
        rows = ps.vectors[rng.choice(len(ps.probs), size=300, p=ps.probs / ps.probs.sum())]
        est = g.mom_confidence(g.mom_estimates(rows), var, 0.95)
        assert not est.rho_ci_degenerate
        width = est.ci_rho[1] - est.ci_rho[0]
        z = _normal_quantile(0.95)
        expected = 2 * z * math.sqrt(var.inv_size_variance * est.rho_hat**4 / 300)
        assert width == pytest.approx(expected, rel=1e-12)


class TestPluginVariances:
    def test_mitosis_sample_degenerate(self):
        var = g.plugin_variances(counts_to_broods(5, 5, 5))
        assert var.inv_size_variance == 0.0

    def test_two_point_sample(self):
        var = g.plugin_variances(np.array([[1, 0], [0, 1]]))
        assert var.ratio_covariance[0, 0] == pytest.approx(0.5)

    def test_monte_carlo_matches_exact(self, rds):
        pair = g.perron(g.reproduction_matrix(rds))
        exact = g.asymptotic_variances(rds, pair)
        ps = g.size_biased_pmf(rds, pair)
        rng = np.random.default_rng(7)
        rows = ps.vectors[rng.choice(len(ps.probs), size=100_000, p=ps.probs / ps.probs.sum())]
        plug = g.plugin_variances(rows)
        # entrywise within 3 sigma of the estimator's own sampling noise
        assert plug.inv_size_variance == pytest.approx(exact.inv_size_variance, rel=0.05)
        assert np.abs(plug.ratio_covariance - exact.ratio_covariance).max() <= 0.003


class TestAmleFit:
    def test_expected_counts_recover_parameters(self):
        fit = g.amle_fit(
            mitosis_family, counts_to_broods(52, 96, 252), (0.5, 0.5), MITOSIS_BOUNDS
        )
        assert fit.theta_hat == pytest.approx(np.array([0.9, 0.7]), abs=1e-4)
        assert fit.converged
        assert fit.stationarity_residual is not None
        assert fit.stationarity_residual < 1e-3

    def test_symmetric_counts_find_one_of_the_twin_optima(self):
        # (0.8, 0.8) and (0.2, 0.2) produce the same size-biased law, so both
        # are exact global maximizers for these counts
        fit = g.amle_fit(
            mitosis_family, counts_to_broods(136, 128, 136), (0.4, 0.6), MITOSIS_BOUNDS
        )
        d_plus = np.abs(fit.theta_hat - np.array([0.8, 0.8])).max()
        d_minus = np.abs(fit.theta_hat - np.array([0.2, 0.2])).max()
        assert min(d_plus, d_minus) <= 1e-4

    def test_loglik_not_below_truth_on_exact_samples(self):
        broods = counts_to_broods(52, 96, 252)

        def loglik_at(theta):
            model = mitosis_family(theta)
            pair = g.perron(g.reproduction_matrix(model))
            ps = g.size_biased_pmf(model, pair)
            return sum(
                c * math.log(ps.prob_of(u))
                for u, c in [((2, 0), 52), ((1, 1), 96), ((0, 2), 252)]
            )

        fit = g.amle_fit(mitosis_family, broods, (0.5, 0.5), MITOSIS_BOUNDS)
        assert fit.loglik >= loglik_at((0.9, 0.7)) - 1e-8

    def test_boundary_optimum_skips_stationarity(self):
        # one-parameter family whose likelihood increases toward the box edge
        def family(theta):
            q = float(theta[0])
            return g.branching_model(
                [
                    g.offspring_law([((2, 0), q), ((1, 1), 1.0 - q)]),
                    g.offspring_law([((1, 1), 1.0)]),
                ]
            )

        broods = np.array([(2, 0)] * 30, dtype=np.int64)
        fit = g.amle_fit(family, broods, (0.5,), ((0.05, 0.95),))
        assert fit.theta_hat[0] == pytest.approx(0.95, abs=1e-9)
        assert fit.stationarity_residual is None

    def test_theta0_outside_box_rejected(self):
        with pytest.raises(ValueError):
            g.amle_fit(mitosis_family, counts_to_broods(1, 1, 1), (0.5, 2.0), MITOSIS_BOUNDS)


class TestMitosisClosedForm:
    def test_expected_count_oracles(self):
        est = g.mitosis_closed_form(52, 96, 252, 400)
        assert (est.alpha_hat, est.theta_hat, est.b1_hat) == pytest.approx((0.9, 0.7, 0.25))
        est = g.mitosis_closed_form(136, 128, 136, 400)
        assert (est.alpha_hat, est.theta_hat, est.b1_hat) == pytest.approx((0.8, 0.8, 0.5))
        assert not est.degenerate and est.in_range

    def test_degenerate_all_unmarked(self):
        est = g.mitosis_closed_form(400, 0, 0, 400)
        assert est.degenerate
        assert (est.alpha_hat, est.theta_hat) == (0.0, 1.0)

    def test_degenerate_all_marked(self):
        est = g.mitosis_closed_form(0, 0, 400, 400)
        assert est.degenerate
        assert (est.alpha_hat, est.theta_hat) == (1.0, 0.0)

    def test_counts_must_sum_to_r(self):
        with pytest.raises(ValueError):
            g.mitosis_closed_form(1, 1, 1, 4)

    def test_twin_root_matches_frequencies_exactly(self):
        # the family is two-to-one from its size-biased law: whenever the
        # twin root is inside the box it reproduces the frequencies too
        def ps_at(alpha, theta):
            model = g.mitosis_model(alpha, theta)
            pair = g.perron(g.reproduction_matrix(model))
            ps = g.size_biased_pmf(model, pair)
            return np.array([ps.prob_of(u) for u in [(2, 0), (1, 1), (0, 2)]])

        rng = np.random.default_rng(31)
        twins_seen = 0
        for _ in range(40):
            counts = rng.multinomial(400, (0.25, 0.4, 0.35))
            n1, nb, n2 = (int(c) for c in counts)
            cf = g.mitosis_closed_form(n1, nb, n2, 400)
            if cf.degenerate or not cf.in_range or 4 * n1 * n2 < nb * nb:
                continue
            freqs = counts / 400
            assert np.abs(ps_at(cf.alpha_hat, cf.theta_hat) - freqs).max() <= 1e-12
            twin = g.mitosis_twin_root(n1, nb, n2, 400)
            if twin is not None:
                assert np.abs(ps_at(*twin) - freqs).max() <= 1e-12
                twins_seen += 1
        assert twins_seen > 0

    def test_b1_equals_moment_estimate(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            counts = rng.multinomial(200, (0.3, 0.45, 0.25))
            broods = counts_to_broods(*counts)
            cf = g.mitosis_closed_form(*counts, 200)
            mom = g.mom_estimates(broods)
            assert cf.b1_hat == mom.ratio_means[0]

    def test_counts_from_sample(self, mitosis88):
        seed = SeedSpec(15)
        trace = g.simulate_aggregate(mitosis88, (1, 1), 10, seed)
        sample = g.draw_family_sample(g.sampling_view(trace), 50, seed)
        n1, nb, n2 = g.mitosis_counts(sample)
        assert n1 + nb + n2 == 50

    def test_rejects_foreign_broods(self):
        with pytest.raises(ValueError):
            g.mitosis_counts(np.array([[3, 0]]))


class TestCiCoverage:
    def test_b1_coverage_at_moderate_depth(self, mitosis88):
        # nominal 95% interval from the exact limit variance should cover
        # the true proportion in 93..97% of 500 replicates at n=16, r=256
        pair = g.perron(g.reproduction_matrix(mitosis88))
        var = g.asymptotic_variances(mitosis88, pair)
        covered = 0
        reps = 500
        for k in range(reps):
            seed = SeedSpec(1606, replicate=k)
            trace = g.simulate_aggregate(mitosis88, (1, 1), 16, seed)
            sample = g.draw_family_sample(g.sampling_view(trace), 256, seed)
            est = g.mom_confidence(g.mom_estimates(sample.broods), var, 0.95)
            if est.ci_b[0, 0] <= 0.5 <= est.ci_b[0, 1]:
                covered += 1
        assert 0.93 * reps <= covered <= 0.97 * reps


class TestAmleAgreesWithClosedForm:
    def test_randomized_multinomial_counts(self):
        # draws from the size-biased law at interior parameters; the exact
        # frequency-matching branch (4 n1 n2 >= nb^2) is the one where the
        # closed form is a likelihood optimum, possibly tied with its twin
        rng = np.random.default_rng(29)
        checked = 0
        while checked < 15:
            a, t = rng.uniform(0.2, 0.9, size=2)
            model = g.mitosis_model(a, t)
            pair = g.perron(g.reproduction_matrix(model))
            ps = g.size_biased_pmf(model, pair)
            probs = [ps.prob_of(u) for u in [(2, 0), (1, 1), (0, 2)]]
            n1, nb, n2 = rng.multinomial(400, probs)
            cf = g.mitosis_closed_form(n1, nb, n2, 400)
            if cf.degenerate or not cf.in_range or 4 * n1 * n2 < nb * nb:
                continue
            fit = g.amle_fit(
                mitosis_family, counts_to_broods(n1, nb, n2), (0.5, 0.5), MITOSIS_BOUNDS
            )
            roots = [(cf.alpha_hat, cf.theta_hat)]
            twin = g.mitosis_twin_root(n1, nb, n2, 400)
            if twin is not None:
                roots.append(twin)
            gap = min(
                max(abs(fit.theta_hat[0] - ra), abs(fit.theta_hat[1] - rt))
                for ra, rt in roots
            )
            assert gap <= 1e-4
            checked += 1

    def test_optimizer_beats_mismatched_branch(self):
        # when 4 n1 n2 < nb^2 the printed closed form is the real part of a
        # complex root pair, not a stationary point; the optimizer must find
        # a strictly better likelihood
        n1, nb, n2 = 30, 180, 190
        cf = g.mitosis_closed_form(n1, nb, n2, 400)
        assert not cf.degenerate

        def loglik_at(alpha, theta):
            model = g.mitosis_model(alpha, theta)
            pair = g.perron(g.reproduction_matrix(model))
            ps = g.size_biased_pmf(model, pair)
            return (
                n1 * math.log(ps.prob_of((2, 0)))
                + nb * math.log(ps.prob_of((1, 1)))
                + n2 * math.log(ps.prob_of((0, 2)))
            )

        fit = g.amle_fit(
            mitosis_family, counts_to_broods(n1, nb, n2), (0.5, 0.5), MITOSIS_BOUNDS
        )
        assert fit.loglik > loglik_at(cf.alpha_hat, cf.theta_hat) + 1.0
