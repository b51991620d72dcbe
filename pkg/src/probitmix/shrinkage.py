"""Dynamic non-local spike-and-slab prior on regression coefficients.

Each coefficient evolves through a three-component mixture: a Gaussian spike
at zero (variance sigma_zero^2) and two weighted slab kernels g_{-1}, g_{+1}.
A slab kernel is a Gaussian N(mu_l, sigma_l^2) multiplied by the weighting
function omega(beta; xi) = 1 - exp(-(beta/xi)^2), which removes mass at the
origin, then renormalized. Transition mixture weights at time t are the three
component densities evaluated at the previous coefficient value, normalized;
at t = 1 the weights are fixed configuration.

A Gaussian random-walk prior is provided behind the same interface for
low-dimensional runs.

All densities broadcast over numpy arrays. Samplers draw slab components by
rejection (propose from the unweighted Gaussian, accept with probability
omega), which is exact with acceptance rate equal to the normalizing
constant.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import quadrature
from .errors import ContractViolation, NumericError

log = logging.getLogger(__name__)

_LOG_2PI = float(np.log(2.0 * np.pi))
_REJECTION_CAP = 10_000

NEG, SPIKE, POS = 0, 1, 2  # component order in weight triples: (-1, 0, +1)


@dataclass(frozen=True)
class ShrinkagePriorSpec:
    """Hyperparameters of the spike and weighted-slab mixture.

    ``initial_weights`` are the fixed t=1 mixture weights in the order
    (negative slab, spike, positive slab).
    """

    mu_neg: float = -1.5
    mu_pos: float = 1.5
    sigma_neg: float = 0.75
    sigma_zero: float = 0.1
    sigma_pos: float = 0.75
    xi: float = 2.0
    initial_weights: tuple[float, float, float] = (0.25, 0.50, 0.25)

    def __post_init__(self):
        if not self.mu_neg < 0.0 < self.mu_pos:
            raise ContractViolation(
                f"need mu_neg < 0 < mu_pos, got ({self.mu_neg}, {self.mu_pos})")
        for name in ("sigma_neg", "sigma_zero", "sigma_pos", "xi"):
            if getattr(self, name) <= 0.0:
                raise ContractViolation(f"{name} must be positive")
        w = np.asarray(self.initial_weights, dtype=float)
        if w.shape != (3,) or np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-9:
            raise ContractViolation(f"initial_weights must be a simplex triple, got {w}")

    def key(self) -> tuple:
        """Fingerprint used to detect stale normalization constants."""
        return (self.mu_neg, self.mu_pos, self.sigma_neg, self.sigma_zero,
                self.sigma_pos, self.xi)


@dataclass(frozen=True)
class SlabNormalization:
    """Normalizing constants of the weighted slab kernels, tied to a spec."""

    c_neg: float
    c_pos: float
    spec_key: tuple

    def check(self, spec: ShrinkagePriorSpec) -> None:
        if self.spec_key != spec.key():
            raise ContractViolation(
                "normalization constants are stale for this prior spec; "
                "recompute with compute_normalization")


def omega(beta, xi: float):
    """Origin-suppressing weight 1 - exp(-(beta/xi)^2), in [0, 1)."""
    if xi <= 0.0:
        raise ContractViolation("xi must be positive")
    beta = np.asarray(beta, dtype=float)
    return -np.expm1(-((beta / xi) ** 2))


def _log_omega(beta, xi: float):
    t = (np.asarray(beta, dtype=float) / xi) ** 2
    with np.errstate(divide="ignore"):
        return np.log(-np.expm1(-t))


def _log_normal(beta, mu: float, sigma: float):
    z = (np.asarray(beta, dtype=float) - mu) / sigma
    return -0.5 * z * z - np.log(sigma) - 0.5 * _LOG_2PI


def closed_form_constant(mu: float, sigma: float, xi: float) -> float:
    """c = 1 - xi/sqrt(xi^2 + 2 sigma^2) * exp(-mu^2/(xi^2 + 2 sigma^2))."""
    denom = xi * xi + 2.0 * sigma * sigma
    return 1.0 - (xi / np.sqrt(denom)) * np.exp(-mu * mu / denom)


def compute_normalization(spec: ShrinkagePriorSpec, rel_tol: float = 1e-10,
                          cross_check_tol: float = 1e-9) -> SlabNormalization:
    """Normalizing constants for both slab kernels.

    Evaluates the closed form and an adaptive Gauss-Kronrod quadrature over
    [mu - 12 sigma, mu + 12 sigma]; raises NumericError if the two routes
    disagree beyond ``cross_check_tol``.
    """
    constants = []
    for mu, sigma in ((spec.mu_neg, spec.sigma_neg), (spec.mu_pos, spec.sigma_pos)):
        closed = closed_form_constant(mu, sigma, spec.xi)

        def integrand(beta, mu=mu, sigma=sigma):
            return omega(beta, spec.xi) * np.exp(_log_normal(beta, mu, sigma))

        # extra breakpoints resolve the omega dip at the origin, whose width
        # (~xi) can be far narrower than the Gaussian window
        quad = quadrature.integrate(
            integrand, mu - 12.0 * sigma, mu + 12.0 * sigma, rel_tol=rel_tol,
            breakpoints=(-8.0 * spec.xi, 0.0, 8.0 * spec.xi))
        if abs(quad - closed) > cross_check_tol * max(abs(closed), 1e-300):
            raise NumericError(
                f"slab normalization mismatch (mu={mu}, sigma={sigma}): "
                f"closed={closed!r} quadrature={quad!r}")
        constants.append(closed)
    return SlabNormalization(c_neg=constants[0], c_pos=constants[1],
                             spec_key=spec.key())


def _log_components(beta, spec: ShrinkagePriorSpec, norm: SlabNormalization):
    """Stacked log densities of the (neg slab, spike, pos slab) components.

    Returns an array with a leading axis of length 3 broadcast over beta.
    """
    lw = _log_omega(beta, spec.xi)
    neg = lw + _log_normal(beta, spec.mu_neg, spec.sigma_neg) - np.log(norm.c_neg)
    spike = _log_normal(beta, 0.0, spec.sigma_zero)
    pos = lw + _log_normal(beta, spec.mu_pos, spec.sigma_pos) - np.log(norm.c_pos)
    return np.stack(np.broadcast_arrays(neg, spike, pos))


def slab_kernel_density(beta, side: int, spec: ShrinkagePriorSpec,
                        norm: SlabNormalization):
    """Density of the weighted slab kernel g_side, side in {-1, +1}."""
    norm.check(spec)
    if side == -1:
        mu, sigma, c = spec.mu_neg, spec.sigma_neg, norm.c_neg
    elif side == +1:
        mu, sigma, c = spec.mu_pos, spec.sigma_pos, norm.c_pos
    else:
        raise ContractViolation(f"side must be -1 or +1, got {side}")
    return omega(beta, spec.xi) * np.exp(_log_normal(beta, mu, sigma)) / c


def transition_weights(beta_prev, spec: ShrinkagePriorSpec,
                       norm: SlabNormalization) -> np.ndarray:
    """Mixture weights (pi_neg, pi_spike, pi_pos) given the previous value.

    Each weight is the corresponding component density at beta_prev,
    normalized. Computed in log space; if every component underflows (only
    possible at non-representable magnitudes), falls back to a hard
    assignment to the nearest-mode component and logs a diagnostic.
    """
    norm.check(spec)
    arr = np.asarray(beta_prev, dtype=float)
    flat = arr.reshape(-1)
    logk = _log_components(flat, spec, norm)
    shift = logk.max(axis=0)
    dead = ~np.isfinite(shift)
    shift = np.where(dead, 0.0, shift)
    w = np.exp(logk - shift)
    w /= w.sum(axis=0)
    if np.any(dead):
        log.warning("transition_weights underflow at %d point(s); using "
                    "nearest-mode hard assignment", int(np.count_nonzero(dead)))
        modes = np.array([spec.mu_neg, 0.0, spec.mu_pos])
        nearest = np.abs(flat[None, :] - modes[:, None]).argmin(axis=0)
        w[:, dead] = np.eye(3)[nearest[dead]].T
    return np.moveaxis(w.reshape((3,) + arr.shape), 0, -1)


def transition_density(beta, beta_prev, spec: ShrinkagePriorSpec,
                       norm: SlabNormalization):
    """Transition density p(beta | beta_prev); broadcasts over both inputs."""
    return np.exp(log_transition_density(beta, beta_prev, spec, norm))


def log_transition_density(beta, beta_prev, spec: ShrinkagePriorSpec,
                           norm: SlabNormalization):
    norm.check(spec)
    beta, beta_prev = np.broadcast_arrays(
        np.asarray(beta, dtype=float), np.asarray(beta_prev, dtype=float))
    with np.errstate(divide="ignore"):
        logw = np.moveaxis(np.log(transition_weights(beta_prev, spec, norm)), -1, 0)
    logk = _log_components(beta, spec, norm)
    return _logsumexp0(logw + logk)


def initial_log_density(beta, spec: ShrinkagePriorSpec, norm: SlabNormalization):
    """Log density of the fixed-weight t=1 mixture."""
    norm.check(spec)
    with np.errstate(divide="ignore"):
        logw = np.log(np.asarray(spec.initial_weights, dtype=float))
    logk = _log_components(np.asarray(beta, dtype=float), spec, norm)
    return _logsumexp0(logw.reshape((3,) + (1,) * (logk.ndim - 1)) + logk)


def _logsumexp0(terms: np.ndarray):
    shift = terms.max(axis=0)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    return shift + np.log(np.exp(terms - shift).sum(axis=0))


def _sample_slab(mu: float, sigma: float, xi: float, size: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Rejection draw from the weighted kernel: accept N(mu, sigma) w.p. omega."""
    out = np.empty(size)
    remaining = np.arange(size)
    for _ in range(_REJECTION_CAP):
        if remaining.size == 0:
            return out
        proposal = rng.normal(mu, sigma, size=remaining.size)
        accept = rng.random(remaining.size) < omega(proposal, xi)
        out[remaining[accept]] = proposal[accept]
        remaining = remaining[~accept]
    raise NumericError(
        f"slab rejection sampler exhausted {_REJECTION_CAP} rounds "
        f"(mu={mu}, sigma={sigma}, xi={xi})")


def _sample_mixture(weights: np.ndarray, spec: ShrinkagePriorSpec,
                    rng: np.random.Generator) -> np.ndarray:
    """Draws from the 3-component mixture; weights is (n, 3) row-stochastic."""
    n = weights.shape[0]
    u = rng.random(n)
    cdf = np.cumsum(weights, axis=1)
    comp = np.minimum((u[:, None] > cdf).sum(axis=1), 2)
    out = np.empty(n)
    spike_idx = np.flatnonzero(comp == SPIKE)
    out[spike_idx] = rng.normal(0.0, spec.sigma_zero, size=spike_idx.size)
    for which, mu, sigma in ((NEG, spec.mu_neg, spec.sigma_neg),
                             (POS, spec.mu_pos, spec.sigma_pos)):
        idx = np.flatnonzero(comp == which)
        out[idx] = _sample_slab(mu, sigma, spec.xi, idx.size, rng)
    return out


def sample_initial(spec: ShrinkagePriorSpec, rng: np.random.Generator, size=None):
    """Draw from the t=1 mixture with the spec's fixed initial weights."""
    shape = () if size is None else tuple(np.atleast_1d(size))
    n = int(np.prod(shape)) if shape else 1
    weights = np.broadcast_to(np.asarray(spec.initial_weights, dtype=float), (n, 3))
    draws = _sample_mixture(weights, spec, rng)
    return float(draws[0]) if size is None else draws.reshape(shape)


def sample_transition(beta_prev, spec: ShrinkagePriorSpec,
                      norm: SlabNormalization, rng: np.random.Generator):
    """Draw beta_t | beta_prev elementwise; output matches beta_prev's shape."""
    beta_prev = np.asarray(beta_prev, dtype=float)
    weights = transition_weights(beta_prev.ravel(), spec, norm)
    draws = _sample_mixture(weights.reshape(-1, 3), spec, rng)
    if beta_prev.ndim == 0:
        return float(draws[0])
    return draws.reshape(beta_prev.shape)


def marginal_prior_log_density(beta_array, prev_pool, spec: ShrinkagePriorSpec,
                               norm: SlabNormalization) -> float:
    """Monte-Carlo marginal log prior of a coefficient array.

    Averages the entrywise transition-density product over the previous-period
    coefficient arrays in ``prev_pool``:
    log[(1/H) sum_h prod_e p(beta_e | prev_{h,e})].
    """
    beta = np.asarray(beta_array, dtype=float)
    prev = np.asarray(prev_pool, dtype=float)
    if prev.ndim == beta.ndim:
        prev = prev[None]
    if prev.shape[0] == 0 or prev.shape[1:] != beta.shape:
        raise ContractViolation(
            f"previous pool shape {prev.shape} incompatible with array {beta.shape}")
    logp = log_transition_density(beta[None], prev, spec, norm)
    per_particle = logp.reshape(prev.shape[0], -1).sum(axis=1)
    shift = per_particle.max()
    return float(shift + np.log(np.exp(per_particle - shift).mean()))


# --- common interface consumed by the SMC engine ---


class NonlocalPrior:
    """Spike-and-slab process bundled with its normalization constants."""

    kind = "nonlocal_sas"

    def __init__(self, spec: ShrinkagePriorSpec):
        self.spec = spec
        self.norm = compute_normalization(spec)

    def sample_initial_array(self, shape, rng) -> np.ndarray:
        return sample_initial(self.spec, rng, size=shape)

    def sample_transition_array(self, prev, rng) -> np.ndarray:
        return sample_transition(prev, self.spec, self.norm, rng)

    def log_initial_density(self, beta):
        return initial_log_density(beta, self.spec, self.norm)

    def log_transition_density(self, beta, beta_prev):
        return log_transition_density(beta, beta_prev, self.spec, self.norm)

    def prepare_transition(self, prev) -> np.ndarray:
        """Cacheable log mixture weights at fixed previous values: (..., 3).

        The filter evaluates many transition densities against one frozen
        previous-period pool; precomputing the weights there removes the
        dominant per-proposal cost.
        """
        logk = _log_components(np.asarray(prev, dtype=float), self.spec, self.norm)
        with np.errstate(divide="ignore"):
            logw = logk - _logsumexp0(logk)
        return np.moveaxis(logw, 0, -1)

    def log_transition_with_table(self, table, beta):
        """log p(beta | prev) with prepare_transition output for prev.

        ``table`` broadcasts against beta with a trailing component axis.
        Terms are bounded above (weights <= 1, densities <= the spike peak),
        so the mixture is summed in linear space without a shift; results are
        floored at log(1e-300) to keep downstream differences NaN-free.
        """
        logk = np.moveaxis(
            _log_components(np.asarray(beta, dtype=float), self.spec, self.norm),
            0, -1)
        dens = np.exp(table + logk).sum(axis=-1)
        return np.log(np.maximum(dens, 1e-300))

    def linear_mixture_parts(self, prev) -> np.ndarray:
        """Linear transition mixture weights at fixed previous values (..., 3).

        Together with linear_component_densities this factors the transition
        density as sum_l w_l(prev) * k_l(beta), which the filter's fused
        kernels exploit: the components do not depend on the previous value.
        """
        return np.exp(self.prepare_transition(prev))

    def linear_component_densities(self, beta) -> np.ndarray:
        """Linear densities of the (neg slab, spike, pos slab) components (..., 3)."""
        return np.exp(np.moveaxis(
            _log_components(np.asarray(beta, dtype=float), self.spec, self.norm),
            0, -1))


class GaussianRandomWalkPrior:
    """Plain Gaussian random walk alternative for low-dimensional runs."""

    kind = "gaussian_rw"

    def __init__(self, init_sd: float = 1.0, walk_sd: float = 0.5):
        if init_sd <= 0.0 or walk_sd <= 0.0:
            raise ContractViolation("random-walk standard deviations must be positive")
        self.init_sd = init_sd
        self.walk_sd = walk_sd

    def sample_initial_array(self, shape, rng) -> np.ndarray:
        return rng.normal(0.0, self.init_sd, size=shape)

    def sample_transition_array(self, prev, rng) -> np.ndarray:
        prev = np.asarray(prev, dtype=float)
        return prev + rng.normal(0.0, self.walk_sd, size=prev.shape)

    def log_initial_density(self, beta):
        return _log_normal(beta, 0.0, self.init_sd)

    def log_transition_density(self, beta, beta_prev):
        beta, beta_prev = np.broadcast_arrays(
            np.asarray(beta, dtype=float), np.asarray(beta_prev, dtype=float))
        z = (beta - beta_prev) / self.walk_sd
        return -0.5 * z * z - np.log(self.walk_sd) - 0.5 * _LOG_2PI

    def prepare_transition(self, prev) -> np.ndarray:
        return np.asarray(prev, dtype=float)[..., None]

    def log_transition_with_table(self, table, beta):
        return self.log_transition_density(beta, table[..., 0])
