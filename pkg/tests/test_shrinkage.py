import numpy as np
import pytest
from scipy import integrate, stats

from probitmix.errors import ContractViolation, NumericError
from probitmix.shrinkage import (GaussianRandomWalkPrior, NonlocalPrior,
                                 ShrinkagePriorSpec, closed_form_constant,
                                 compute_normalization, initial_log_density,
                                 marginal_prior_log_density, omega,
                                 sample_initial, sample_transition,
                                 slab_kernel_density, transition_density,
                                 transition_weights)

# frozen against a 30-digit evaluation of the closed form
C_POS_BENCHMARK = 0.43046923255860519013
G1_AT_MODE = 0.53161157790401670591
SPIKE_AT_ZERO = 3.9894228040143267794
WEIGHTS_AT_1P5 = (0.00033535013046647810, 1.0400177602365062e-48,
                  0.99966464986953352)


def quad_cdf(density, lo, hi):
    """Independent CDF oracle built from scipy quadrature of a density."""
    grid = np.linspace(lo, hi, 4001)
    pieces = [0.0]
    for a, b in zip(grid[:-1], grid[1:]):
        val, _ = integrate.quad(density, a, b, limit=100)
        pieces.append(pieces[-1] + val)
    cdf_values = np.array(pieces)
    cdf_values /= cdf_values[-1]

    def cdf(x):
        return np.interp(x, grid, cdf_values)

    return cdf


class TestOmega:
    def test_zero_at_origin(self):
        for xi in (0.1, 1.0, 2.0, 7.3):
            assert omega(0.0, xi) == 0.0

    def test_value_at_xi(self):
        assert omega(2.0, 2.0) == pytest.approx(1 - np.exp(-1), abs=1e-15)
        assert omega(-3.5, 3.5) == pytest.approx(1 - np.exp(-1), abs=1e-15)

    def test_strictly_increasing_in_magnitude(self):
        beta = np.linspace(0.01, 10, 300)
        vals = omega(beta, 2.0)
        assert np.all(np.diff(vals) > 0)
        assert vals[-1] < 1.0

    def test_rejects_bad_xi(self):
        with pytest.raises(ContractViolation):
            omega(1.0, 0.0)


class TestNormalization:
    def test_benchmark_constant_frozen(self, prior_spec, norm):
        assert norm.c_pos == pytest.approx(C_POS_BENCHMARK, abs=1e-12)
        assert norm.c_neg == pytest.approx(C_POS_BENCHMARK, abs=1e-12)

    def test_quadrature_oracle_agreement(self, prior_spec, norm):
        def integrand(b):
            return omega(b, prior_spec.xi) * stats.norm.pdf(b, prior_spec.mu_pos,
                                                            prior_spec.sigma_pos)
        val, _ = integrate.quad(integrand, -np.inf, np.inf)
        assert norm.c_pos == pytest.approx(val, abs=1e-10)

    def test_mu_zero_closed_form(self):
        spec = ShrinkagePriorSpec(mu_neg=-1e-9, mu_pos=1e-9)
        # as mu -> 0 the constant approaches 1 - xi/sqrt(xi^2 + 2 sigma^2)
        expected = 1 - spec.xi / np.sqrt(spec.xi ** 2 + 2 * spec.sigma_pos ** 2)
        assert closed_form_constant(0.0, spec.sigma_pos, spec.xi) == pytest.approx(
            expected, abs=1e-15)

    def test_sigma_to_zero_limit_is_omega_at_mu(self):
        assert closed_form_constant(1.5, 1e-8, 2.0) == pytest.approx(
            omega(1.5, 2.0), abs=1e-9)

    def test_closed_form_matches_quadrature_over_parameter_box(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            mu = rng.uniform(0.01, 10)
            sigma = rng.uniform(0.01, 10)
            xi = rng.uniform(0.01, 10)
            spec = ShrinkagePriorSpec(mu_neg=-mu, mu_pos=mu, sigma_neg=sigma,
                                      sigma_pos=sigma, xi=xi)
            computed = compute_normalization(spec)
            assert computed.c_pos == pytest.approx(
                closed_form_constant(mu, sigma, xi), abs=1e-9)

    def test_constants_in_unit_interval(self, norm):
        assert 0.0 < norm.c_neg <= 1.0
        assert 0.0 < norm.c_pos <= 1.0


class TestSlabKernel:
    def test_vanishes_exactly_at_zero(self, prior_spec, norm):
        assert slab_kernel_density(0.0, -1, prior_spec, norm) == 0.0
        assert slab_kernel_density(0.0, +1, prior_spec, norm) == 0.0

    def test_benchmark_density_value(self, prior_spec, norm):
        assert slab_kernel_density(1.5, +1, prior_spec, norm) == pytest.approx(
            G1_AT_MODE, abs=1e-12)

    def test_integrates_to_one(self, prior_spec, norm):
        val, _ = integrate.quad(
            lambda b: slab_kernel_density(b, +1, prior_spec, norm),
            -np.inf, np.inf)
        assert val == pytest.approx(1.0, abs=1e-9)

    def test_dominated_by_unweighted_gaussian(self, prior_spec, norm):
        beta = np.linspace(-8, 8, 401)
        g = slab_kernel_density(beta, -1, prior_spec, norm)
        envelope = stats.norm.pdf(beta, prior_spec.mu_neg,
                                  prior_spec.sigma_neg) / norm.c_neg
        assert np.all(g <= envelope + 1e-15)

    def test_small_xi_limit_recovers_gaussian(self):
        spec = ShrinkagePriorSpec(xi=1e-4)
        norm = compute_normalization(spec)
        # 1 - c shrinks like O(xi)
        assert norm.c_pos == pytest.approx(1.0, abs=2e-5)
        beta = np.array([-2.0, 1.0, 1.5, 3.0])
        np.testing.assert_allclose(
            slab_kernel_density(beta, +1, spec, norm),
            stats.norm.pdf(beta, spec.mu_pos, spec.sigma_pos), rtol=1e-4)

    def test_stale_normalization_rejected(self, prior_spec, norm):
        other = ShrinkagePriorSpec(xi=1.0)
        with pytest.raises(ContractViolation):
            slab_kernel_density(1.0, +1, other, norm)


class TestTransitionWeights:
    def test_origin_gives_pure_spike(self, prior_spec, norm):
        w = transition_weights(0.0, prior_spec, norm)
        np.testing.assert_array_equal(w, [0.0, 1.0, 0.0])

    def test_symmetry_swaps_slab_weights(self, prior_spec, norm):
        for b in (0.3, 1.1, 2.7):
            w_pos = transition_weights(b, prior_spec, norm)
            w_neg = transition_weights(-b, prior_spec, norm)
            assert w_pos[1] == pytest.approx(w_neg[1], rel=1e-12)
            assert w_pos[0] == pytest.approx(w_neg[2], rel=1e-12)
            assert w_pos[2] == pytest.approx(w_neg[0], rel=1e-12)

    def test_benchmark_triple_at_positive_mode(self, prior_spec, norm):
        w = transition_weights(1.5, prior_spec, norm)
        assert w[2] > 0.99
        for got, expected in zip(w, WEIGHTS_AT_1P5):
            assert got == pytest.approx(expected, rel=1e-10)

    def test_sums_to_one_exactly(self, prior_spec, norm):
        grid = np.linspace(-4, 4, 33)
        w = transition_weights(grid, prior_spec, norm)
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-15)
        assert np.all(w >= 0.0) and np.all(w <= 1.0)


class TestTransitionDensity:
    def test_from_origin_equals_spike_density(self, prior_spec, norm):
        beta = np.linspace(-1, 1, 11)
        np.testing.assert_allclose(
            transition_density(beta, 0.0, prior_spec, norm),
            stats.norm.pdf(beta, 0.0, prior_spec.sigma_zero), rtol=1e-12)

    def test_value_at_origin_is_weighted_spike(self, prior_spec, norm):
        for b_prev in (0.0, 0.7, -2.2):
            w = transition_weights(b_prev, prior_spec, norm)
            assert transition_density(0.0, b_prev, prior_spec, norm) == \
                pytest.approx(w[1] * SPIKE_AT_ZERO, rel=1e-12)

    def test_integrates_to_one_on_b_prev_grid(self, prior_spec, norm):
        for b_prev in np.linspace(-4, 4, 20):
            val, _ = integrate.quad(
                lambda b: transition_density(b, b_prev, prior_spec, norm),
                -np.inf, np.inf, limit=200)
            assert val == pytest.approx(1.0, abs=1e-8)

    def test_sign_symmetry(self, prior_spec, norm):
        rng = np.random.default_rng(2)
        b = rng.normal(size=50)
        b_prev = rng.normal(size=50)
        np.testing.assert_allclose(
            transition_density(b, b_prev, prior_spec, norm),
            transition_density(-b, -b_prev, prior_spec, norm), rtol=1e-12)


class TestSamplers:
    def test_spike_only_initial_moments(self, norm):
        spec = ShrinkagePriorSpec(initial_weights=(0.0, 1.0, 0.0))
        rng = np.random.default_rng(10)
        draws = sample_initial(spec, rng, size=100_000)
        assert abs(draws.mean()) < 4 * spec.sigma_zero / np.sqrt(draws.size)
        assert draws.var() == pytest.approx(spec.sigma_zero ** 2, rel=0.03)

    def test_positive_slab_matches_quadrature_cdf(self, prior_spec, norm):
        spec = ShrinkagePriorSpec(initial_weights=(0.0, 0.0, 1.0))
        rng = np.random.default_rng(11)
        draws = sample_initial(spec, rng, size=100_000)
        cdf = quad_cdf(lambda b: slab_kernel_density(b, +1, prior_spec, norm),
                       -6.0, 9.0)
        assert stats.kstest(draws, cdf).pvalue > 0.01

    def test_symmetric_mixture_mean_near_zero(self):
        spec = ShrinkagePriorSpec(initial_weights=(0.5, 0.0, 0.5))
        rng = np.random.default_rng(12)
        draws = sample_initial(spec, rng, size=100_000)
        se = draws.std() / np.sqrt(draws.size)
        assert abs(draws.mean()) < 3 * se

    def test_transition_from_origin_is_spike(self, prior_spec, norm):
        rng = np.random.default_rng(13)
        draws = sample_transition(np.zeros(100_000), prior_spec, norm, rng)
        assert stats.kstest(draws, lambda x: stats.norm.cdf(
            x, 0.0, prior_spec.sigma_zero)).pvalue > 0.01

    def test_deep_positive_mode_slab_fraction(self, prior_spec, norm):
        rng = np.random.default_rng(14)
        n = 100_000
        draws = sample_transition(np.full(n, prior_spec.mu_pos), prior_spec,
                                  norm, rng)
        w = transition_weights(prior_spec.mu_pos, prior_spec, norm)
        in_positive_slab = np.mean(draws > 0.5)
        # essentially all mass should be the positive slab component
        se = np.sqrt(w[2] * (1 - w[2]) / n) + 1e-4
        assert abs(in_positive_slab - w[2]) < 5 * se + stats.norm.cdf(
            (0.5 - prior_spec.mu_pos) / prior_spec.sigma_pos)

    def test_transition_histogram_total_variation(self, prior_spec, norm):
        rng = np.random.default_rng(15)
        b_prev = 1.2
        n = 100_000
        draws = sample_transition(np.full(n, b_prev), prior_spec, norm, rng)
        edges = np.linspace(-5, 6, 56)
        hist, _ = np.histogram(draws, bins=edges)
        empirical = hist / n
        expected = np.empty(edges.size - 1)
        for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
            expected[i], _ = integrate.quad(
                lambda x: transition_density(x, b_prev, prior_spec, norm), a, b)
        tail = 1.0 - expected.sum()
        tv = 0.5 * (np.abs(empirical - expected).sum() + tail)
        assert tv < 0.02

    def test_transition_draws_ks_on_quadrature_cdf(self, prior_spec, norm):
        rng = np.random.default_rng(16)
        b_prev = -1.5
        draws = sample_transition(np.full(100_000, b_prev), prior_spec, norm, rng)
        cdf = quad_cdf(lambda b: transition_density(b, b_prev, prior_spec, norm),
                       -7.0, 7.0)
        assert stats.kstest(draws, cdf).pvalue > 0.01


class TestMarginalPrior:
    def test_single_previous_particle(self, prior_spec, norm):
        beta = np.array([[[0.4, -0.2]], [[0.0, 1.1]]])
        prev = beta * 0.5
        expected = np.log(transition_density(beta, prev, prior_spec, norm)).sum()
        got = marginal_prior_log_density(beta, prev[None], prior_spec, norm)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_identical_pool_equals_single(self, prior_spec, norm):
        rng = np.random.default_rng(20)
        beta = rng.normal(size=(2, 2, 1))
        prev = rng.normal(size=(2, 2, 1))
        single = marginal_prior_log_density(beta, prev[None], prior_spec, norm)
        pool = np.repeat(prev[None], 5, axis=0)
        assert marginal_prior_log_density(beta, pool, prior_spec, norm) == \
            pytest.approx(single, rel=1e-12)

    def test_two_particle_scalar_oracle(self, prior_spec, norm):
        beta = np.array([[[0.5]]])
        pool = np.array([[[[0.0]]], [[[1.5]]]])
        p0 = transition_density(0.5, 0.0, prior_spec, norm)
        p1 = transition_density(0.5, 1.5, prior_spec, norm)
        expected = np.log(0.5 * (p0 + p1))
        assert marginal_prior_log_density(beta, pool, prior_spec, norm) == \
            pytest.approx(expected, rel=1e-12)

    def test_empty_pool_rejected(self, prior_spec, norm):
        with pytest.raises(ContractViolation):
            marginal_prior_log_density(np.zeros((1, 1, 1)),
                                       np.zeros((0, 1, 1, 1)), prior_spec, norm)


class TestPriorInterfaces:
    def test_nonlocal_initial_density_matches_module_function(self, prior_spec):
        prior = NonlocalPrior(prior_spec)
        beta = np.linspace(-3, 3, 13)
        np.testing.assert_allclose(prior.log_initial_density(beta),
                                   initial_log_density(beta, prior_spec,
                                                       prior.norm))

    def test_gaussian_rw_round_trip(self):
        prior = GaussianRandomWalkPrior(init_sd=1.0, walk_sd=0.5)
        rng = np.random.default_rng(3)
        draws = prior.sample_transition_array(np.zeros(200_000), rng)
        assert draws.std() == pytest.approx(0.5, rel=0.02)
        expected = stats.norm.logpdf(0.3, 0.1, 0.5)
        assert prior.log_transition_density(0.3, 0.1) == pytest.approx(expected,
                                                                       rel=1e-12)

    def test_gaussian_rw_rejects_bad_sd(self):
        with pytest.raises(ContractViolation):
            GaussianRandomWalkPrior(init_sd=0.0)


def test_initial_density_integrates_to_one(prior_spec, norm):
    val, _ = integrate.quad(
        lambda b: np.exp(initial_log_density(b, prior_spec, norm)),
        -np.inf, np.inf, limit=200)
    assert val == pytest.approx(1.0, abs=1e-8)


def test_rejection_cap_raises_numeric_error():
    # acceptance probability ~ omega(beta; xi) with huge xi is ~0 everywhere
    spec = ShrinkagePriorSpec(xi=1e9, initial_weights=(0.0, 0.0, 1.0))
    rng = np.random.default_rng(1)
    with pytest.raises(NumericError):
        sample_initial(spec, rng, size=4)
