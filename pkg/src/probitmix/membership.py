"""Topic-model-derived membership priors.

Group membership is governed by topic proportions theta on the K-simplex,
parameterized through a (K-1)-dimensional logistic-normal vector eta with the
K-th component as the zero reference. The engine usually ingests
per-respondent logistic-normal posteriors estimated upstream; when only raw
document counts and socio covariates are available, ``laplace_theta_posterior``
produces the Gaussian approximation (mode + inverse negative Hessian) of the
posterior over eta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ContractViolation, NumericError

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class StmHyper:
    """Fixed topic-model hyperparameters.

    gamma: (K, H) row-stochastic topic-word matrix. Rows are floored at
        1e-12 and renormalized on construction so truncated upstream files
        cannot produce -inf word log-likelihoods.
    lam:   (K-1, U) covariate-to-eta coefficient matrix; the prior mean of
        eta for covariates v is lam @ v.
    psi:   (K-1, K-1) symmetric PSD prior covariance of eta.
    """

    gamma: np.ndarray
    lam: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        lam = np.asarray(self.lam, dtype=float)
        psi = np.asarray(self.psi, dtype=float)
        if gamma.ndim != 2 or lam.ndim != 2 or psi.ndim != 2:
            raise ContractViolation("gamma, lam, psi must be 2-D arrays")
        k = gamma.shape[0]
        if lam.shape[0] != k - 1 or psi.shape != (k - 1, k - 1):
            raise ContractViolation(
                f"inconsistent shapes: gamma {gamma.shape}, lam {lam.shape}, psi {psi.shape}")
        if np.any(gamma < 0.0):
            raise ContractViolation("gamma entries must be nonnegative")
        if np.any(np.abs(gamma.sum(axis=1) - 1.0) > 1e-9):
            raise ContractViolation("gamma rows must sum to 1 within 1e-9")
        if psi.size and np.max(np.abs(psi - psi.T)) > 1e-12:
            raise ContractViolation("psi must be symmetric within 1e-12")
        if psi.size:
            eigs = np.linalg.eigvalsh(0.5 * (psi + psi.T))
            if eigs.min() < -1e-10:
                raise ContractViolation(
                    f"psi not PSD: smallest eigenvalue {eigs.min()!r}")
        gamma = np.maximum(gamma, 1e-12)
        gamma = gamma / gamma.sum(axis=1, keepdims=True)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "psi", 0.5 * (psi + psi.T))

    @property
    def topic_count(self) -> int:
        return self.gamma.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.gamma.shape[1]


@dataclass(frozen=True)
class LogisticNormalPosterior:
    """Gaussian posterior over eta: mean (K-1,), covariance (K-1, K-1)."""

    eta_mean: np.ndarray
    eta_cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.eta_mean, dtype=float).reshape(-1)
        cov = np.asarray(self.eta_cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ContractViolation(
                f"eta_cov shape {cov.shape} incompatible with mean length {mean.size}")
        object.__setattr__(self, "eta_mean", mean)
        object.__setattr__(self, "eta_cov", cov)

    @property
    def group_count(self) -> int:
        return self.eta_mean.size + 1

    def sqrt_factor(self) -> np.ndarray:
        """Symmetric square root of the covariance (for sampling)."""
        return _symmetric_sqrt(self.eta_cov)


def _symmetric_sqrt(cov: np.ndarray) -> np.ndarray:
    if cov.size == 0:
        return cov.reshape(0, 0)
    cov = 0.5 * (cov + cov.T)
    eigval, eigvec = np.linalg.eigh(cov)
    if eigval.min() < -1e-8 * max(1.0, abs(eigval.max())):
        raise NumericError(f"covariance not PSD; eigenvalues {eigval!r}")
    return (eigvec * np.sqrt(np.clip(eigval, 0.0, None))) @ eigvec.T


@dataclass(frozen=True)
class DocumentCounts:
    """Sparse bag-of-words counts over a vocabulary of size ``vocab_size``."""

    indices: np.ndarray
    counts: np.ndarray
    vocab_size: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int).reshape(-1)
        cnt = np.asarray(self.counts, dtype=int).reshape(-1)
        if idx.shape != cnt.shape:
            raise ContractViolation("indices and counts must have equal length")
        if np.any(cnt < 0):
            raise ContractViolation("counts must be nonnegative")
        if idx.size and (idx.min() < 0 or idx.max() >= self.vocab_size):
            raise ContractViolation(
                f"word index outside vocabulary of size {self.vocab_size}")
        keep = cnt > 0
        object.__setattr__(self, "indices", idx[keep])
        object.__setattr__(self, "counts", cnt[keep])

    @classmethod
    def from_dense(cls, dense) -> "DocumentCounts":
        dense = np.asarray(dense, dtype=int)
        idx = np.flatnonzero(dense)
        return cls(indices=idx, counts=dense[idx], vocab_size=dense.size)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def softmax_embed(eta) -> np.ndarray:
    """Map eta in R^{K-1} to theta on the K-simplex (K-th entry is reference).

    Max-shifted so extreme eta cannot overflow; supports leading batch axes
    (the eta axis must be last).
    """
    eta = np.asarray(eta, dtype=float)
    full = np.concatenate([eta, np.zeros(eta.shape[:-1] + (1,))], axis=-1)
    full -= full.max(axis=-1, keepdims=True)
    expd = np.exp(full)
    return expd / expd.sum(axis=-1, keepdims=True)


def sample_theta(post: LogisticNormalPosterior, rng: np.random.Generator,
                 size=None) -> np.ndarray:
    """Draw theta = softmax_embed(eta), eta ~ N(mean, cov)."""
    factor = post.sqrt_factor()
    shape = () if size is None else tuple(np.atleast_1d(size))
    z = rng.standard_normal(shape + (post.eta_mean.size,))
    eta = post.eta_mean + z @ factor.T
    return softmax_embed(eta)


def sample_membership(theta, rng: np.random.Generator) -> int:
    """Draw a 0-based group index with probabilities theta."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < -1e-9) or abs(theta.sum() - 1.0) > 1e-9:
        raise ContractViolation(f"theta not on the simplex: sum={theta.sum()!r}")
    u = rng.random()
    return int(min((u > np.cumsum(theta)).sum(), theta.size - 1))


def word_loglik(doc: DocumentCounts, theta, hyper: StmHyper) -> float:
    """log p(words | theta) with per-word topic indicators marginalized.

    Returns -inf if some observed word has zero probability under every
    topic (cannot happen after the gamma flooring at load, but kept as the
    documented sentinel for externally constructed hyperparameters).
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (hyper.topic_count,):
        raise ContractViolation(
            f"theta length {theta.shape} != topic count {hyper.topic_count}")
    if doc.vocab_size != hyper.vocab_size:
        raise ContractViolation(
            f"document vocabulary {doc.vocab_size} != hyper vocabulary {hyper.vocab_size}")
    if doc.indices.size == 0:
        return 0.0
    word_probs = theta @ hyper.gamma[:, doc.indices]
    with np.errstate(divide="ignore"):
        return float(doc.counts @ np.log(word_probs))


def _word_objective_parts(doc: DocumentCounts, hyper: StmHyper, eta: np.ndarray):
    """Value, gradient, Hessian of the word log-likelihood in eta.

    With theta = softmax_embed(eta), m_i = sum_k theta_k gamma_{k,i} and
    a_j = theta_j sum_i n_i gamma_{j,i} / m_i:
        grad_j = a_j - n_tot theta_j
        hess_jl = delta_jl (a_j - n_tot theta_j)
                  - theta_j theta_l (S_jl - n_tot),
    where S_jl = sum_i n_i gamma_{j,i} gamma_{l,i} / m_i^2.
    """
    theta = softmax_embed(eta)
    gam = hyper.gamma[:, doc.indices]
    counts = doc.counts.astype(float)
    m = theta @ gam
    value = float(counts @ np.log(m))
    n_tot = counts.sum()
    a = theta * (gam @ (counts / m))
    s = (gam * (counts / m ** 2)) @ gam.T
    grad_full = a - n_tot * theta
    hess_full = np.diag(grad_full) - np.outer(theta, theta) * (s - n_tot)
    km1 = eta.size
    return value, grad_full[:km1], hess_full[:km1, :km1]


def laplace_theta_posterior(doc: DocumentCounts, v, hyper: StmHyper,
                            max_iter: int = 500, grad_tol: float = 1e-6
                            ) -> LogisticNormalPosterior:
    """Gaussian approximation to p(eta | doc, v) at its mode.

    Maximizes word_loglik(doc, softmax_embed(eta)) + log N(eta; lam @ v, psi)
    by damped Newton ascent from the prior mean, then returns the mode and
    the inverse negative Hessian there. An empty document short-circuits to
    the exact prior. Raises NumericError if the gradient norm has not
    dropped below ``grad_tol`` after ``max_iter`` iterations.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != hyper.lam.shape[1]:
        raise ContractViolation(
            f"covariate length {v.size} != lam columns {hyper.lam.shape[1]}")
    prior_mean = hyper.lam @ v
    if doc.indices.size == 0:
        return LogisticNormalPosterior(prior_mean.copy(), hyper.psi.copy())

    try:
        psi_chol = scipy.linalg.cho_factor(hyper.psi)
    except scipy.linalg.LinAlgError as exc:
        raise NumericError(f"psi is singular; Laplace step needs an invertible "
                           f"prior covariance: {exc}") from exc
    psi_inv = scipy.linalg.cho_solve(psi_chol, np.eye(prior_mean.size))

    def objective(eta):
        value, grad, hess = _word_objective_parts(doc, hyper, eta)
        resid = eta - prior_mean
        value -= 0.5 * float(resid @ psi_inv @ resid)
        grad = grad - psi_inv @ resid
        hess = hess - psi_inv
        return value, grad, hess

    eta = prior_mean.copy()
    value, grad, hess = objective(eta)
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= grad_tol:
            break
        try:
            direction = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            direction = grad
        if float(direction @ grad) <= 0.0:
            direction = grad
        step = 1.0
        for _ in range(60):
            cand = eta + step * direction
            cand_value, cand_grad, cand_hess = objective(cand)
            if cand_value >= value + 1e-4 * step * float(direction @ grad):
                eta, value, grad, hess = cand, cand_value, cand_grad, cand_hess
                break
            step *= 0.5
        else:
            raise NumericError(
                f"Laplace line search stalled at |grad|={gnorm!r}, eta={eta!r}")
    else:
        raise NumericError(
            f"Laplace ascent did not converge in {max_iter} iterations; "
            f"final |grad|={float(np.linalg.norm(grad))!r}")

    neg_hess = -hess
    try:
        cov = scipy.linalg.cho_solve(scipy.linalg.cho_factor(neg_hess),
                                     np.eye(eta.size))
    except scipy.linalg.LinAlgError:
        cov = np.linalg.inv(neg_hess + 1e-8 * np.eye(eta.size))
    return LogisticNormalPosterior(eta, 0.5 * (cov + cov.T))


def draw_theta_matrix(priors, count: int, rng: np.random.Generator) -> np.ndarray:
    """Stack of theta draws: (count, N, K) for N aligned posteriors.

    Used by the filter to draw one theta per particle per respondent.
    Covariance square roots are factored once per posterior.
    """
    n = len(priors)
    if n == 0:
        return np.zeros((count, 0, 0))
    km1 = priors[0].eta_mean.size
    means = np.stack([p.eta_mean for p in priors])
    factors = np.stack([p.sqrt_factor() for p in priors])
    z = rng.standard_normal((count, n, km1))
    eta = means[None] + np.einsum("nkd,jnd->jnk", factors, z)
    return softmax_embed(eta)
