"""Synthetic-data generation, an exact grid oracle, and the KL metric.

The generator reproduces the benchmark data-generating process: binary
covariates with an intercept column, first-period coefficients drawn
N(0, var 2) and hard-thresholded to exact zeros at the sparsity quantile,
second-period coefficients drawn N(previous, var 0.5) and thresholded again,
topic proportions drawn from a Dirichlet with parameter (exp(eta), 1), and
ordinal responses generated from the latent-Gaussian threshold model.

The oracle enumerates a uniform coefficient grid, marginalizes memberships
per respondent in closed form (topic-proportion means computed by
Gauss-Hermite quadrature), and propagates the grid posterior across periods
exactly, yielding a reference filtered predictive for tiny instances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .membership import LogisticNormalPosterior, softmax_embed
from .model import (ModelSpec, OutcomeSpec, PeriodBatch, Respondent, log_cells,
                    threshold_bounds)
from .predictive import PredictivePmf, _group_cell_probs, outcome_lattice

log = logging.getLogger(__name__)

ORACLE_COST_BOUND = 10 ** 8


@dataclass(frozen=True)
class ScenarioSpec:
    """Benchmark scenario sizes: per-period counts, Q, K, sparsity, seed."""

    n_per_period: tuple[int, int]
    q: int
    k: int
    sparsity: float
    replications: int = 20
    seed: int = 0
    sigma_eta: float = 0.5

    def __post_init__(self):
        if any(n <= 0 for n in self.n_per_period):
            raise ContractViolation("per-period counts must be positive")
        if self.q < 1 or self.k < 1 or self.replications < 1:
            raise ContractViolation("q, k, replications must be positive")
        if not 0.0 < self.sparsity < 1.0:
            raise ContractViolation("sparsity must lie in (0, 1)")
        if self.sigma_eta <= 0.0:
            raise ContractViolation("sigma_eta must be positive")


@dataclass
class SyntheticTruth:
    """Ground truth of one replication, including pre-threshold draws."""

    b1: np.ndarray
    b2: np.ndarray
    memberships: np.ndarray
    theta_bar: np.ndarray
    eta_bar: np.ndarray
    b1_raw: np.ndarray
    b2_raw: np.ndarray


def benchmark_model(q: int, k: int) -> ModelSpec:
    """The four-outcome benchmark layout: two 3-level and two 4-level outcomes."""
    outcomes = (
        OutcomeSpec.from_thresholds("y1", (-0.5, 0.5)),
        OutcomeSpec.from_thresholds("y2", (-0.5, 0.5)),
        OutcomeSpec.from_thresholds("y3", (-0.75, 0.0, 0.75)),
        OutcomeSpec.from_thresholds("y4", (-0.75, 0.0, 0.75)),
    )
    return ModelSpec(outcomes=outcomes, covariate_count=q, group_count=k)


def threshold_to_zero(raw: np.ndarray, sparsity: float) -> np.ndarray:
    """Zero all entries whose magnitude falls below the sparsity quantile."""
    cut = np.quantile(np.abs(raw), sparsity)
    return np.where(np.abs(raw) < cut, 0.0, raw)


def sample_responses(model: ModelSpec, coefficients: np.ndarray,
                     memberships: np.ndarray, covariates: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    """Ordinal responses from the latent-Gaussian threshold model.

    y_p = 1 + #(thresholds below z_p) with z ~ N(x @ B[s], I).
    """
    mu = np.einsum("nq,nqp->np", covariates, coefficients[memberships])
    z = mu + rng.standard_normal(mu.shape)
    y = np.empty(mu.shape, dtype=int)
    for p, outcome in enumerate(model.outcomes):
        y[:, p] = 1 + np.searchsorted(np.asarray(outcome.thresholds), z[:, p],
                                      side="left")
    return y


def generate_scenario(spec: ScenarioSpec, rng: np.random.Generator,
                      model: ModelSpec | None = None
                      ) -> tuple[SyntheticTruth, list[PeriodBatch]]:
    """One replication: ground truth plus the two period batches.

    ``model`` defaults to the four-outcome benchmark layout; a custom spec
    with matching Q and K may be passed for reduced instances.
    """
    if model is None:
        model = benchmark_model(spec.q, spec.k)
    if model.covariate_count != spec.q or model.group_count != spec.k:
        raise ContractViolation("model dimensions disagree with scenario spec")
    k, q, p = model.coefficient_shape
    n_total = sum(spec.n_per_period)

    b1_raw = rng.normal(0.0, np.sqrt(2.0), size=(k, q, p))
    b1 = threshold_to_zero(b1_raw, spec.sparsity)
    b2_raw = b1 + rng.normal(0.0, np.sqrt(0.5), size=(k, q, p))
    b2 = threshold_to_zero(b2_raw, spec.sparsity)

    eta_bar = rng.standard_normal((n_total, k - 1))
    alpha = np.concatenate([np.exp(eta_bar), np.ones((n_total, 1))], axis=1)
    gamma_draws = rng.gamma(alpha)
    theta_bar = gamma_draws / gamma_draws.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        memberships = (np.log(theta_bar)
                       + rng.gumbel(size=theta_bar.shape)).argmax(axis=1)

    covariates = np.ones((n_total, q))
    if q > 1:
        covariates[:, 1:] = rng.integers(0, 2, size=(n_total, q - 1))

    shared_cov = spec.sigma_eta ** 2 * np.eye(k - 1)
    batches = []
    offset = 0
    for period, n_t in enumerate(spec.n_per_period, start=1):
        rows = slice(offset, offset + n_t)
        coeff = b1 if period == 1 else b2
        y = sample_responses(model, coeff, memberships[rows], covariates[rows], rng)
        respondents = [
            Respondent(covariates=covariates[i], responses=y[i - offset], period=period)
            for i in range(offset, offset + n_t)
        ]
        priors = [LogisticNormalPosterior(eta_bar[i], shared_cov)
                  for i in range(offset, offset + n_t)]
        batches.append(PeriodBatch(period=period, respondents=respondents,
                                   membership_priors=priors))
        offset += n_t

    truth = SyntheticTruth(b1=b1, b2=b2, memberships=memberships,
                           theta_bar=theta_bar, eta_bar=eta_bar,
                           b1_raw=b1_raw, b2_raw=b2_raw)
    return truth, batches


def logistic_normal_mean(post: LogisticNormalPosterior, nodes: int = 40) -> np.ndarray:
    """E[softmax_embed(eta)] for eta ~ N(mean, cov), by Gauss-Hermite quadrature.

    Supports up to three latent dimensions (tiny-instance oracle territory).
    """
    d = post.eta_mean.size
    if d == 0:
        return np.ones(1)
    if d > 3:
        raise ContractViolation(
            f"quadrature mean supports eta dimension <= 3, got {d}")
    u, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / np.sqrt(2.0 * np.pi)
    point_grids = np.meshgrid(*([u] * d), indexing="ij")
    weight_grids = np.meshgrid(*([w] * d), indexing="ij")
    points = np.stack([g.ravel() for g in point_grids], axis=1)
    weights = np.ones(points.shape[0])
    for wg in weight_grids:
        weights *= wg.ravel()
    eta = post.eta_mean + points @ post.sqrt_factor().T
    theta = softmax_embed(eta)
    return weights @ theta


@dataclass(frozen=True)
class GridSpec:
    """Uniform coefficient grid for the oracle."""

    lo: float = -3.0
    hi: float = 3.0
    points: int = 41

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.points)


class OracleResult:
    """Exact grid posterior per period with predictive summation."""

    def __init__(self, model: ModelSpec, grid: GridSpec, states: np.ndarray,
                 period_posteriors: list, periods: list):
        self.model = model
        self.grid = grid
        self.states = states          # (S, K, Q, P)
        self.period_posteriors = period_posteriors  # list of (S,) simplex arrays
        self.periods = periods

    def posterior(self, period: int) -> np.ndarray:
        return self.period_posteriors[self.periods.index(period)]

    def predictive(self, covariates, membership_prior: LogisticNormalPosterior,
                   period: int | None = None, nodes: int = 40) -> PredictivePmf:
        """Exact posterior predictive pmf for a profile at a period."""
        weights = self.period_posteriors[-1] if period is None else self.posterior(period)
        q_mix = logistic_normal_mean(membership_prior, nodes=nodes)
        x = np.asarray(covariates, dtype=float)
        cell = _group_cell_probs(x, self.states, self.model)  # (S, K, L)
        mixed = np.einsum("k,skl->sl", q_mix, cell)
        mass = weights @ mixed
        return PredictivePmf(outcome_lattice(self.model), mass / mass.sum(),
                             draws=weights.size)


def _state_space(model: ModelSpec, grid: GridSpec) -> np.ndarray:
    e = int(np.prod(model.coefficient_shape))
    g = grid.values()
    mesh = np.meshgrid(*([g] * e), indexing="ij")
    flat = np.stack([m.ravel() for m in mesh], axis=1)
    return flat.reshape((-1,) + model.coefficient_shape)


def _batch_loglik(states: np.ndarray, batch: PeriodBatch, model: ModelSpec,
                  q_mix: np.ndarray) -> np.ndarray:
    """Summed mixture log-likelihood of a batch at every grid state."""
    if len(batch) == 0:
        return np.zeros(states.shape[0])
    x = batch.covariate_matrix()
    lo, hi = threshold_bounds(model, batch.response_matrix())
    mu = np.einsum("nq,skqp->snkp", x, states)
    cells = log_cells(mu, lo[None, :, None, :], hi[None, :, None, :])  # (S, N, K)
    with np.errstate(divide="ignore"):
        terms = np.log(q_mix)[None, :, :] + cells
    shift = terms.max(axis=2)
    mix = shift + np.log(np.exp(terms - shift[:, :, None]).sum(axis=2))
    return mix.sum(axis=1)


def brute_force_posterior(batches, model: ModelSpec, prior,
                          grid: GridSpec | None = None,
                          nodes: int = 40) -> OracleResult:
    """Exact filtered posterior over a coefficient grid, tiny instances only.

    ``prior`` is a coefficient prior exposing log_initial_density and
    log_transition_density (elementwise). Memberships are marginalized per
    respondent against the Gauss-Hermite mean of each membership prior; the
    grid posterior is propagated across periods by axis-wise transition
    contractions. Refuses instances whose enumeration cost bound
    K^(sum N_t) * points^(K*Q*P) exceeds 1e8.
    """
    grid = grid or GridSpec()
    k, q, p = model.coefficient_shape
    e = k * q * p
    n_total = sum(len(b) for b in batches)
    cost = float(k) ** n_total * float(grid.points) ** e
    if cost > ORACLE_COST_BOUND:
        raise ContractViolation(
            f"oracle cost bound exceeded: K^N * G^(KQP) = {cost:.3g} > {ORACLE_COST_BOUND:g}")

    states = _state_space(model, grid)
    g = grid.values()
    shape_e = (grid.points,) * e

    log_init = prior.log_initial_density(g)
    trans = np.exp(prior.log_transition_density(g[:, None], g[None, :]))  # (new, old)

    posteriors = []
    periods = []
    current = None
    for batch in batches:
        q_mix = np.stack([logistic_normal_mean(pr, nodes=nodes)
                          for pr in batch.membership_priors]) \
            if len(batch) else np.zeros((0, k))
        loglik = _batch_loglik(states, batch, model, q_mix)
        if current is None:
            lp = np.zeros(shape_e)
            for axis in range(e):
                broadcast = [1] * e
                broadcast[axis] = grid.points
                lp = lp + log_init.reshape(broadcast)
            log_prior = lp.ravel()
        else:
            dens = current.reshape(shape_e)
            for axis in range(e):
                dens = np.moveaxis(
                    np.tensordot(trans, dens, axes=([1], [axis])), 0, axis)
            log_prior = np.log(np.maximum(dens.ravel(), 1e-300))
        log_post = log_prior + loglik
        log_post -= log_post.max()
        post = np.exp(log_post)
        post /= post.sum()
        current = post
        posteriors.append(post)
        periods.append(batch.period)
    return OracleResult(model, grid, states, posteriors, periods)


def discrete_kl(p: PredictivePmf, q: PredictivePmf) -> float:
    """KL(p || q) in nats on the shared finite outcome lattice.

    q is floored at 1e-12 wherever p places mass on a q-zero point (flagged).
    """
    if p.support.shape != q.support.shape or np.any(p.support != q.support):
        raise ContractViolation("predictive supports differ")
    pm = p.mass
    qm = q.mass.copy()
    needs_floor = (pm > 0) & (qm < 1e-12)
    if np.any(needs_floor):
        log.warning("discrete_kl: flooring %d zero masses in q",
                    int(np.count_nonzero(needs_floor)))
        qm[needs_floor] = 1e-12
    active = pm > 0
    return float(np.sum(pm[active] * np.log(pm[active] / qm[active])))
