import numpy as np
import pytest

from probitmix.errors import ContractViolation, NumericError
from probitmix.membership import (DocumentCounts, LogisticNormalPosterior,
                                  StmHyper, _word_objective_parts,
                                  draw_theta_matrix, laplace_theta_posterior,
                                  sample_membership, sample_theta,
                                  softmax_embed, word_loglik)


def make_hyper(rng, k=3, h=8, u=2):
    gamma = rng.dirichlet(np.ones(h), size=k)
    lam = rng.normal(size=(k - 1, u))
    a = rng.normal(size=(k - 1, k - 1))
    psi = a @ a.T + 0.5 * np.eye(k - 1)
    return StmHyper(gamma=gamma, lam=lam, psi=psi)


class TestSoftmaxEmbed:
    def test_zero_eta_gives_uniform(self):
        np.testing.assert_allclose(softmax_embed(np.zeros(3)), np.full(4, 0.25),
                                   atol=1e-15)
        np.testing.assert_allclose(softmax_embed(np.zeros(1)), [0.5, 0.5],
                                   atol=1e-15)

    def test_log_ratio_example(self):
        theta = softmax_embed(np.log([2.0, 1.0]))
        np.testing.assert_allclose(theta, [0.5, 0.25, 0.25], atol=1e-15)

    def test_sums_to_one_and_positive(self):
        rng = np.random.default_rng(0)
        eta = rng.normal(scale=5, size=(100, 4))
        theta = softmax_embed(eta)
        np.testing.assert_allclose(theta.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(theta > 0.0)

    def test_overflow_safe(self):
        theta = softmax_embed(np.array([800.0, -800.0]))
        assert np.isfinite(theta).all()
        assert theta[0] == pytest.approx(1.0, abs=1e-12)


class TestSampleTheta:
    def test_zero_covariance_is_deterministic(self):
        post = LogisticNormalPosterior(np.array([0.3, -0.4]), np.zeros((2, 2)))
        rng = np.random.default_rng(1)
        theta = sample_theta(post, rng)
        np.testing.assert_allclose(theta, softmax_embed(post.eta_mean), atol=1e-15)

    def test_zero_mean_zero_cov_is_uniform(self):
        post = LogisticNormalPosterior(np.zeros(2), np.zeros((2, 2)))
        theta = sample_theta(post, np.random.default_rng(2))
        np.testing.assert_allclose(theta, np.full(3, 1 / 3), atol=1e-15)

    def test_eta_mean_recovered_from_draws(self):
        cov = np.array([[0.5, 0.2], [0.2, 0.8]])
        post = LogisticNormalPosterior(np.array([0.4, -0.9]), cov)
        rng = np.random.default_rng(3)
        n = 100_000
        z = rng.standard_normal((n, 2))
        eta = post.eta_mean + z @ post.sqrt_factor().T
        se = eta.std(axis=0) / np.sqrt(n)
        assert np.all(np.abs(eta.mean(axis=0) - post.eta_mean) < 4 * se)
        np.testing.assert_allclose(np.cov(eta.T), cov, atol=0.02)

    def test_non_psd_covariance_reports_eigenvalues(self):
        post = LogisticNormalPosterior(np.zeros(2),
                                       np.array([[1.0, 0.0], [0.0, -0.5]]))
        with pytest.raises(NumericError, match="eigenvalues"):
            sample_theta(post, np.random.default_rng(4))


class TestSampleMembership:
    def test_one_hot_always_selected(self):
        rng = np.random.default_rng(5)
        for k in range(4):
            theta = np.zeros(4)
            theta[k] = 1.0
            assert all(sample_membership(theta, rng) == k for _ in range(20))

    def test_uniform_frequencies_chi2(self):
        rng = np.random.default_rng(6)
        draws = np.array([sample_membership(np.full(4, 0.25), rng)
                          for _ in range(20_000)])
        counts = np.bincount(draws, minlength=4)
        chi2 = ((counts - 5000.0) ** 2 / 5000.0).sum()
        from scipy.stats import chi2 as chi2_dist
        assert chi2 < chi2_dist.ppf(0.999, df=3)

    def test_binomial_frequency(self):
        rng = np.random.default_rng(7)
        n = 20_000
        draws = np.array([sample_membership(np.array([0.7, 0.3]), rng)
                          for _ in range(n)])
        phat = np.mean(draws == 0)
        assert abs(phat - 0.7) < 4 * np.sqrt(0.7 * 0.3 / n)

    def test_rejects_off_simplex(self):
        with pytest.raises(ContractViolation):
            sample_membership(np.array([0.5, 0.6]), np.random.default_rng(8))


class TestWordLoglik:
    def test_empty_document_is_zero(self):
        hyper = make_hyper(np.random.default_rng(9))
        doc = DocumentCounts(indices=[], counts=[], vocab_size=hyper.vocab_size)
        assert word_loglik(doc, np.full(3, 1 / 3), hyper) == 0.0

    def test_single_topic_reduces_to_gamma_row(self):
        rng = np.random.default_rng(10)
        gamma = rng.dirichlet(np.ones(6), size=1)
        hyper = StmHyper(gamma=gamma, lam=np.zeros((0, 2)), psi=np.zeros((0, 0)))
        doc = DocumentCounts(indices=[0, 3], counts=[2, 1], vocab_size=6)
        expected = 2 * np.log(hyper.gamma[0, 0]) + np.log(hyper.gamma[0, 3])
        assert word_loglik(doc, np.ones(1), hyper) == pytest.approx(expected,
                                                                    rel=1e-12)

    def test_two_topic_mixture_example(self):
        gamma = np.array([[0.1, 0.9], [0.3, 0.7]])
        hyper = StmHyper(gamma=gamma, lam=np.zeros((1, 1)), psi=np.eye(1))
        doc = DocumentCounts(indices=[0], counts=[1], vocab_size=2)
        assert word_loglik(doc, np.array([0.5, 0.5]), hyper) == pytest.approx(
            np.log(0.2), rel=1e-12)

    def test_count_splitting_invariance(self):
        hyper = make_hyper(np.random.default_rng(11))
        theta = softmax_embed(np.array([0.2, -0.3]))
        doubled = DocumentCounts(indices=[2], counts=[2],
                                 vocab_size=hyper.vocab_size)
        split = DocumentCounts(indices=[2, 2], counts=[1, 1],
                               vocab_size=hyper.vocab_size)
        assert word_loglik(doubled, theta, hyper) == pytest.approx(
            word_loglik(split, theta, hyper), rel=1e-14)

    def test_vocab_mismatch_rejected(self):
        hyper = make_hyper(np.random.default_rng(12))
        doc = DocumentCounts(indices=[0], counts=[1], vocab_size=99)
        with pytest.raises(ContractViolation):
            word_loglik(doc, np.full(3, 1 / 3), hyper)


class TestStmHyper:
    def test_rejects_non_stochastic_gamma(self):
        with pytest.raises(ContractViolation):
            StmHyper(gamma=np.array([[0.5, 0.4]]), lam=np.zeros((0, 1)),
                     psi=np.zeros((0, 0)))

    def test_rejects_non_psd_psi(self):
        with pytest.raises(ContractViolation):
            StmHyper(gamma=np.full((2, 2), 0.5), lam=np.zeros((1, 1)),
                     psi=np.array([[-1.0]]))

    def test_gamma_zero_entries_floored(self):
        gamma = np.array([[1.0, 0.0], [0.5, 0.5]])
        hyper = StmHyper(gamma=gamma, lam=np.zeros((1, 1)), psi=np.eye(1))
        assert hyper.gamma.min() > 0.0
        np.testing.assert_allclose(hyper.gamma.sum(axis=1), 1.0, atol=1e-15)


class TestLaplacePosterior:
    def test_empty_document_returns_exact_prior(self):
        rng = np.random.default_rng(13)
        hyper = make_hyper(rng)
        v = rng.normal(size=2)
        doc = DocumentCounts(indices=[], counts=[], vocab_size=hyper.vocab_size)
        post = laplace_theta_posterior(doc, v, hyper)
        np.testing.assert_array_equal(post.eta_mean, hyper.lam @ v)
        np.testing.assert_array_equal(post.eta_cov, hyper.psi)

    def test_gradient_and_hessian_match_finite_differences(self):
        rng = np.random.default_rng(14)
        for _ in range(30):
            k = int(rng.integers(2, 6))
            h = int(rng.integers(2, 21))
            hyper = make_hyper(rng, k=k, h=h)
            words = rng.integers(0, h, size=rng.integers(1, 6))
            doc = DocumentCounts(indices=words,
                                 counts=rng.integers(1, 5, size=words.size),
                                 vocab_size=h)
            eta = rng.normal(scale=0.8, size=k - 1)
            _, grad, hess = _word_objective_parts(doc, hyper, eta)
            eps = 1e-5
            for j in range(k - 1):
                step = np.zeros(k - 1)
                step[j] = eps
                up, _, _ = _word_objective_parts(doc, hyper, eta + step)
                down, _, _ = _word_objective_parts(doc, hyper, eta - step)
                fd = (up - down) / (2 * eps)
                assert grad[j] == pytest.approx(fd, rel=1e-5, abs=1e-7)
                _, gup, _ = _word_objective_parts(doc, hyper, eta + step)
                _, gdown, _ = _word_objective_parts(doc, hyper, eta - step)
                np.testing.assert_allclose(hess[:, j], (gup - gdown) / (2 * eps),
                                           rtol=1e-4, atol=1e-6)

    def test_mode_gradient_small_and_hessian_negative_definite(self):
        rng = np.random.default_rng(15)
        hyper = make_hyper(rng, k=4, h=10)
        doc = DocumentCounts(indices=[0, 3, 7], counts=[4, 1, 2], vocab_size=10)
        v = rng.normal(size=2)
        post = laplace_theta_posterior(doc, v, hyper)
        import scipy.linalg
        psi_inv = scipy.linalg.inv(hyper.psi)
        _, grad, hess = _word_objective_parts(doc, hyper, post.eta_mean)
        grad = grad - psi_inv @ (post.eta_mean - hyper.lam @ v)
        hess = hess - psi_inv
        assert np.linalg.norm(grad) < 1e-6
        assert np.all(np.linalg.eigvalsh(hess) < 0.0)
        # covariance equals inverse negative Hessian at the mode
        np.testing.assert_allclose(post.eta_cov, np.linalg.inv(-hess),
                                   rtol=1e-8, atol=1e-12)

    def test_heavy_document_concentrates_on_favored_topic(self):
        # K=2 vocabulary of one word strongly favoring topic 1
        gamma = np.array([[0.99, 0.01], [0.01, 0.99]])
        hyper = StmHyper(gamma=gamma, lam=np.zeros((1, 1)), psi=np.eye(1))
        doc = DocumentCounts(indices=[0], counts=[1000], vocab_size=2)
        post = laplace_theta_posterior(doc, np.zeros(1), hyper)
        theta_mode = softmax_embed(post.eta_mean)
        assert theta_mode[0] > 0.99
        # 1-D grid-search oracle over eta
        grid = np.linspace(-10, 10, 8001)
        values = [word_loglik(doc, softmax_embed(np.array([e])), hyper)
                  - 0.5 * e ** 2 for e in grid]
        eta_star = grid[int(np.argmax(values))]
        assert post.eta_mean[0] == pytest.approx(eta_star, abs=5e-3)


def test_draw_theta_matrix_shapes_and_distribution():
    rng = np.random.default_rng(16)
    priors = [LogisticNormalPosterior(np.array([0.5]), np.array([[0.04]])),
              LogisticNormalPosterior(np.array([-1.0]), np.array([[0.0]]))]
    theta = draw_theta_matrix(priors, 5000, rng)
    assert theta.shape == (5000, 2, 2)
    np.testing.assert_allclose(theta.sum(axis=-1), 1.0, atol=1e-12)
    # second posterior is deterministic
    expected = softmax_embed(np.array([-1.0]))
    assert np.abs(theta[:, 1, :] - expected).max() < 1e-12
