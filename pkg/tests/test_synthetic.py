import numpy as np
import pytest
from scipy import stats

from probitmix.errors import ContractViolation
from probitmix.membership import LogisticNormalPosterior, softmax_embed
from probitmix.model import ModelSpec, OutcomeSpec, PeriodBatch, Respondent
from probitmix.predictive import PredictivePmf, outcome_lattice
from probitmix.shrinkage import NonlocalPrior, ShrinkagePriorSpec
from probitmix.synthetic import (GridSpec, ScenarioSpec, benchmark_model,
                                 brute_force_posterior, discrete_kl,
                                 generate_scenario, logistic_normal_mean,
                                 threshold_to_zero)

from conftest import make_tiny_batches


class TestGenerator:
    def setup_method(self):
        self.spec = ScenarioSpec(n_per_period=(200, 250), q=3, k=5,
                                 sparsity=0.2, replications=1, seed=10)

    def test_exact_zero_fraction(self):
        rng = np.random.default_rng(0)
        truth, _ = generate_scenario(self.spec, rng)
        entries = truth.b1.size
        zeros = int(np.sum(truth.b1 == 0.0))
        assert zeros == int(np.ceil(self.spec.sparsity * entries))
        zeros2 = int(np.sum(truth.b2 == 0.0))
        assert zeros2 == int(np.ceil(self.spec.sparsity * entries))

    def test_near_zero_sparsity_zeroes_single_smallest_entry(self):
        # the ceil-quantile construction zeroes ceil(sparsity * entries)
        # entries, so one entry goes even for vanishing sparsity
        spec = ScenarioSpec(n_per_period=(20, 20), q=2, k=2, sparsity=1e-9,
                            replications=1, seed=1)
        truth, _ = generate_scenario(spec, np.random.default_rng(1))
        assert np.sum(truth.b1 == 0.0) == 1
        assert np.abs(truth.b1_raw)[truth.b1 == 0.0] == np.abs(truth.b1_raw).min()

    def test_fixed_seed_reproducible(self):
        a, _ = generate_scenario(self.spec, np.random.default_rng(42))
        b, _ = generate_scenario(self.spec, np.random.default_rng(42))
        np.testing.assert_array_equal(a.b1, b.b1)
        np.testing.assert_array_equal(a.memberships, b.memberships)

    def test_covariates_are_intercept_plus_binary(self):
        _, batches = generate_scenario(self.spec, np.random.default_rng(2))
        x = batches[0].covariate_matrix()
        assert np.all(x[:, 0] == 1.0)
        assert set(np.unique(x[:, 1:])) <= {0.0, 1.0}

    def test_responses_within_category_bounds(self):
        model = benchmark_model(self.spec.q, self.spec.k)
        _, batches = generate_scenario(self.spec, np.random.default_rng(3))
        for batch, n_expected in zip(batches, self.spec.n_per_period):
            assert len(batch) == n_expected
            y = batch.response_matrix()
            for p, outcome in enumerate(model.outcomes):
                assert y[:, p].min() >= 1
                assert y[:, p].max() <= outcome.categories

    def test_pre_threshold_variance_near_two(self):
        rng = np.random.default_rng(4)
        draws = np.concatenate([
            generate_scenario(self.spec, rng)[0].b1_raw.ravel()
            for _ in range(10)])
        n = draws.size
        ci = stats.chi2.ppf([0.005, 0.995], df=n - 1) / (n - 1)
        assert ci[0] <= draws.var(ddof=1) / 2.0 <= ci[1]

    def test_transition_residual_variance_near_half(self):
        rng = np.random.default_rng(5)
        residuals = []
        for _ in range(10):
            truth, _ = generate_scenario(self.spec, rng)
            residuals.append((truth.b2_raw - truth.b1).ravel())
        residuals = np.concatenate(residuals)
        n = residuals.size
        ci = stats.chi2.ppf([0.005, 0.995], df=n - 1) / (n - 1)
        assert ci[0] <= residuals.var(ddof=1) / 0.5 <= ci[1]

    def test_membership_priors_carry_truth_eta(self):
        truth, batches = generate_scenario(self.spec, np.random.default_rng(6))
        first = batches[0].membership_priors[0]
        np.testing.assert_array_equal(first.eta_mean, truth.eta_bar[0])
        np.testing.assert_allclose(first.eta_cov,
                                   self.spec.sigma_eta ** 2 * np.eye(4))

    def test_threshold_helper_quantile_rule(self):
        rng = np.random.default_rng(7)
        raw = rng.normal(size=60)
        out = threshold_to_zero(raw, 0.2)
        assert int(np.sum(out == 0.0)) == 12  # ceil(0.2 * 60)


class TestLogisticNormalMean:
    def test_matches_monte_carlo(self):
        post = LogisticNormalPosterior(np.array([0.4, -0.7]),
                                       np.array([[0.3, 0.1], [0.1, 0.5]]))
        exact = logistic_normal_mean(post, nodes=60)
        rng = np.random.default_rng(8)
        z = rng.standard_normal((400_000, 2))
        eta = post.eta_mean + z @ post.sqrt_factor().T
        mc = softmax_embed(eta).mean(axis=0)
        assert np.abs(exact - mc).max() < 4e-3
        assert exact.sum() == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_dimension_zero(self):
        post = LogisticNormalPosterior(np.zeros(0), np.zeros((0, 0)))
        np.testing.assert_array_equal(logistic_normal_mean(post), [1.0])

    def test_refuses_high_dimension(self):
        post = LogisticNormalPosterior(np.zeros(4), np.eye(4))
        with pytest.raises(ContractViolation):
            logistic_normal_mean(post)


def binary_model(k=1):
    return ModelSpec(outcomes=(OutcomeSpec.from_thresholds("y", (0.0,)),),
                     covariate_count=1, group_count=k)


class TestOracle:
    def test_single_grid_point_returns_likelihood_pmf(self):
        model = binary_model()
        prior = NonlocalPrior(ShrinkagePriorSpec())
        r = Respondent(covariates=[1.0], responses=[2], period=1)
        lnp = LogisticNormalPosterior(np.zeros(0), np.zeros((0, 0)))
        batch = PeriodBatch(period=1, respondents=[r], membership_priors=[lnp])
        grid = GridSpec(lo=0.8, hi=0.8, points=1)
        oracle = brute_force_posterior([batch], model, prior, grid)
        pmf = oracle.predictive(np.array([1.0]), lnp)
        from probitmix.model import cell_probability
        expected = [cell_probability(0.8, model.outcomes[0], c) for c in (1, 2)]
        np.testing.assert_allclose(pmf.mass, expected, atol=1e-12)

    def test_symmetric_instance_gives_even_predictive(self):
        model = binary_model()
        prior = NonlocalPrior(ShrinkagePriorSpec())
        lnp = LogisticNormalPosterior(np.zeros(0), np.zeros((0, 0)))
        respondents = [Respondent(covariates=[1.0], responses=[1], period=1),
                       Respondent(covariates=[1.0], responses=[2], period=1)]
        batch = PeriodBatch(period=1, respondents=respondents,
                            membership_priors=[lnp, lnp])
        grid = GridSpec(lo=-2.0, hi=2.0, points=81)
        oracle = brute_force_posterior([batch], model, prior, grid)
        post = oracle.posterior(1)
        np.testing.assert_allclose(post, post[::-1], rtol=1e-10)
        pmf = oracle.predictive(np.array([1.0]), lnp)
        assert pmf.mass[0] == pytest.approx(pmf.mass[1], rel=1e-10)

    def test_posterior_normalized_and_refinement_stable(self, tiny_model,
                                                        nonlocal_prior):
        batches = make_tiny_batches(99)
        coarse = brute_force_posterior(batches, tiny_model, nonlocal_prior,
                                       GridSpec(points=41))
        fine = brute_force_posterior(batches, tiny_model, nonlocal_prior,
                                     GridSpec(points=81))
        assert coarse.posterior(2).sum() == pytest.approx(1.0, abs=1e-12)
        p = batches[1].membership_priors[0]
        x = batches[1].respondents[0].covariates
        pmf_coarse = coarse.predictive(x, p)
        pmf_fine = fine.predictive(x, p)
        assert np.abs(pmf_coarse.mass - pmf_fine.mass).max() < 1e-3

    def test_cost_bound_refusal(self):
        model = binary_model(k=2)
        prior = NonlocalPrior(ShrinkagePriorSpec())
        lnp = LogisticNormalPosterior(np.zeros(1), np.eye(1))
        respondents = [Respondent(covariates=[1.0], responses=[1], period=1)
                       for _ in range(40)]
        batch = PeriodBatch(period=1, respondents=respondents,
                            membership_priors=[lnp] * 40)
        with pytest.raises(ContractViolation, match="cost bound"):
            brute_force_posterior([batch], model, prior, GridSpec(points=41))


class TestDiscreteKl:
    def _pmf(self, mass):
        spec = binary_model()
        support = outcome_lattice(spec)
        return PredictivePmf(support, np.asarray(mass, dtype=float), draws=1)

    def test_self_divergence_zero(self):
        p = self._pmf([0.3, 0.7])
        assert discrete_kl(p, p) == 0.0

    def test_log_two_example(self):
        p = self._pmf([1.0, 0.0])
        q = self._pmf([0.5, 0.5])
        assert discrete_kl(p, q) == pytest.approx(np.log(2.0), rel=1e-12)

    def test_nonnegative_over_random_pairs(self):
        rng = np.random.default_rng(9)
        for _ in range(1000):
            p = self._pmf(rng.dirichlet([0.5, 0.5]))
            q = self._pmf(rng.dirichlet([0.5, 0.5]))
            assert discrete_kl(p, q) >= 0.0

    def test_support_mismatch_rejected(self):
        p = self._pmf([0.5, 0.5])
        spec3 = ModelSpec(outcomes=(OutcomeSpec.from_thresholds("y", (-1.0, 1.0)),),
                          covariate_count=1, group_count=1)
        q = PredictivePmf(outcome_lattice(spec3), np.array([0.2, 0.5, 0.3]),
                          draws=1)
        with pytest.raises(ContractViolation):
            discrete_kl(p, q)

    def test_zero_mass_in_q_floored(self):
        p = self._pmf([0.5, 0.5])
        q = self._pmf([1.0, 0.0])
        val = discrete_kl(p, q)
        assert np.isfinite(val)
        assert val == pytest.approx(0.5 * np.log(0.5 / 1.0)
                                    + 0.5 * np.log(0.5 / 1e-12), rel=1e-9)


def test_scenario_spec_validation():
    with pytest.raises(ContractViolation):
        ScenarioSpec(n_per_period=(0, 5), q=1, k=1, sparsity=0.2)
    with pytest.raises(ContractViolation):
        ScenarioSpec(n_per_period=(5, 5), q=1, k=1, sparsity=1.0)
