"""Two-level sequential Monte Carlo filter with Metropolis-Hastings rejuvenation.

The between-month step propagates each particle's coefficient array through
the dynamic shrinkage prior, draws topic proportions and group memberships
from the external membership priors, and hands the batch to the within-month
filter. The within-month filter processes one respondent at a time: weight by
the conditional likelihood p(y_n | B_j, s_nj), resample, then rejuvenate the
active group slice of every particle with an MH move whose target is the
marginal prior of the coefficients times the accumulated mixture likelihood
of the observations seen so far (group memberships marginalized against each
particle's own topic-proportion draws). Month end re-draws memberships with a
single exact Gibbs pass.

Multiple independent instances run with permuted observation orders; their
pools are aligned by optimal-assignment relabeling and concatenated.

All randomness flows through numpy Generators seeded from
(seed, period, instance), so results are reproducible and independent of
worker scheduling.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _kernels
from .errors import ContractViolation, FilterAbort
from .membership import draw_theta_matrix
from .model import LOG_PROB_FLOOR, ModelSpec, PeriodBatch, log_cells, threshold_bounds

log = logging.getLogger(__name__)

_HPOOL_STREAM = 2 ** 20  # instance-slot tag for the shared previous-pool subsample
_CELL_FLOOR = float(np.exp(LOG_PROB_FLOOR))


@dataclass(frozen=True)
class FilterConfig:
    """Tuning of the filter: particle counts, rejuvenation, and resampling."""

    particles_per_instance: int = 150
    instances: int = 30
    ess_threshold: float = 1.0
    rejuvenation_sweeps: int = 1
    first_period_sweeps: int | None = None
    proposal_mix: float = 0.5
    jitter_sd: float = 0.1
    resampler: str = "systematic"
    seed: int = 0
    prev_pool_size: int = 64

    def __post_init__(self):
        if self.particles_per_instance < 2:
            raise ContractViolation("particles_per_instance must be >= 2")
        if self.instances < 1:
            raise ContractViolation("instances must be >= 1")
        if not 0.0 < self.ess_threshold <= 1.0:
            raise ContractViolation("ess_threshold must lie in (0, 1]")
        if self.rejuvenation_sweeps < 0:
            raise ContractViolation("rejuvenation_sweeps must be >= 0")
        if not 0.0 <= self.proposal_mix <= 1.0:
            raise ContractViolation("proposal_mix must lie in [0, 1]")
        if self.jitter_sd <= 0.0:
            raise ContractViolation("jitter_sd must be positive")
        if self.resampler not in ("systematic", "multinomial"):
            raise ContractViolation(f"unknown resampler {self.resampler!r}")
        if self.prev_pool_size < 1:
            raise ContractViolation("prev_pool_size must be >= 1")
        if self.seed < 0:
            raise ContractViolation("seed must be a nonnegative integer")

    def sweeps_for(self, first_period: bool) -> int:
        """Rejuvenation sweeps per observation for a period.

        The first period starts from the diffuse initial prior, so it runs
        extra sweeps (5 by default) unless rejuvenation is disabled outright
        or an explicit override is configured.
        """
        if not first_period:
            return self.rejuvenation_sweeps
        if self.first_period_sweeps is not None:
            return self.first_period_sweeps
        return 5 if self.rejuvenation_sweeps > 0 else 0


@dataclass
class Particle:
    """One particle: a coefficient array, batch memberships, and a log weight."""

    coefficients: np.ndarray
    memberships: np.ndarray
    log_weight: float


@dataclass
class ParticlePool:
    """J particles stored as stacked arrays.

    coefficients: (J, K, Q, P); memberships: (J, N) 0-based group indices for
    the period's respondents in batch order; log_weights: (J,) unnormalized.
    """

    coefficients: np.ndarray
    memberships: np.ndarray
    log_weights: np.ndarray
    period: int
    rng_seed: int
    instance_id: int
    ess_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        self.memberships = np.asarray(self.memberships, dtype=int)
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        j = self.coefficients.shape[0]
        if self.memberships.shape[0] != j or self.log_weights.shape != (j,):
            raise ContractViolation("pool arrays disagree on particle count")
        if self.memberships.size and (
                self.memberships.min() < 0
                or self.memberships.max() >= self.coefficients.shape[1]):
            raise ContractViolation("membership indices outside 0..K-1")

    @property
    def size(self) -> int:
        return self.coefficients.shape[0]

    def particle(self, j: int) -> Particle:
        return Particle(self.coefficients[j], self.memberships[j],
                        float(self.log_weights[j]))

    def normalized_weights(self) -> np.ndarray:
        return normalize_log_weights(self.log_weights)

    def mean_coefficients(self) -> np.ndarray:
        w = self.normalized_weights()
        return np.einsum("j,jkqp->kqp", w, self.coefficients)


def normalize_log_weights(logw) -> np.ndarray:
    """Max-shifted exponentiation; output sums to 1."""
    logw = np.asarray(logw, dtype=float)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def effective_sample_size(weights) -> float:
    """1 / sum(w^2) for normalized weights; ranges over [1, J]."""
    weights = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(weights ** 2))


def distinct_effective_size(pool: ParticlePool) -> float:
    """Effective number of distinct coefficient atoms under the pool weights.

    Resampling duplicates particles without changing their step weights, so
    the plain per-step ESS cannot see sample impoverishment; this diagnostic
    merges identical coefficient arrays and applies 1/sum(share^2) to the
    merged masses.
    """
    w = pool.normalized_weights()
    _, inverse = np.unique(pool.coefficients.reshape(pool.size, -1), axis=0,
                           return_inverse=True)
    shares = np.bincount(inverse, weights=w)
    return float(1.0 / np.sum(shares ** 2))


def compute_weights(pool: ParticlePool, respondent, spec: ModelSpec,
                    membership_index: int) -> np.ndarray:
    """Normalized weights p(y_n | B_j, s_nj) across the pool's particles."""
    lo, hi = threshold_bounds(spec, respondent.responses[None])
    sel = pool.coefficients[np.arange(pool.size), pool.memberships[:, membership_index]]
    mu = np.einsum("q,jqp->jp", respondent.covariates, sel)
    return normalize_log_weights(log_cells(mu, lo[0], hi[0]))


def resample_indices(weights, rng: np.random.Generator,
                     scheme: str = "systematic") -> np.ndarray:
    """Offspring indices for J = len(weights) particles.

    The systematic scheme guarantees each offspring count lies in
    {floor(J w_j), ceil(J w_j)}.
    """
    weights = np.asarray(weights, dtype=float)
    j = weights.size
    if scheme == "systematic":
        cum = np.cumsum(weights)
        cum[-1] = 1.0
        positions = (np.arange(j) + (1.0 - rng.random())) / j
        return np.searchsorted(cum, positions, side="left")
    if scheme == "multinomial":
        return rng.choice(j, size=j, p=weights / weights.sum())
    raise ContractViolation(f"unknown resampler {scheme!r}")


def resample(pool: ParticlePool, weights, rng: np.random.Generator,
             scheme: str = "systematic") -> ParticlePool:
    """Resampled pool with uniform (zero) log weights."""
    idx = resample_indices(weights, rng, scheme)
    return replace(pool,
                   coefficients=pool.coefficients[idx],
                   memberships=pool.memberships[idx],
                   log_weights=np.zeros(pool.size))


def relabel(pool: ParticlePool, reference: np.ndarray | None = None) -> ParticlePool:
    """Align group labels of every particle to a reference coefficient array.

    For each particle, the group permutation minimizing the summed squared
    distance between its coefficient slices and the reference slices is found
    by optimal assignment and applied to both coefficients and memberships.
    Defaults to the first particle as the reference when none is supplied.

    This is a canonicalization: relabeling a pool whose labels were permuted
    (per particle or globally) yields bit-identical output to relabeling the
    original, so downstream summaries are insensitive to label scrambling.
    Group labels carry topic identity through the membership priors, so the
    filtering chain itself never permutes particles; relabel is applied to
    reporting copies and to undo externally permuted inputs.
    """
    b = pool.coefficients
    j, k = b.shape[0], b.shape[1]
    if j == 0 or k == 1:
        return pool
    ref = np.asarray(pool.coefficients[0] if reference is None else reference,
                     dtype=float)
    flat = b.reshape(j, k, -1)
    ref_flat = ref.reshape(k, -1)
    # cost[j, a, b] = ||B_j[a] - ref[b]||^2
    cost = ((flat ** 2).sum(-1)[:, :, None] + (ref_flat ** 2).sum(-1)[None, None, :]
            - 2.0 * np.einsum("jad,bd->jab", flat, ref_flat))
    new_b = np.empty_like(b)
    new_s = np.empty_like(pool.memberships)
    for i in range(j):
        rows, cols = linear_sum_assignment(cost[i])
        mapping = np.empty(k, dtype=int)
        mapping[rows] = cols
        new_b[i, mapping] = b[i]
        if pool.memberships.shape[1]:
            new_s[i] = mapping[pool.memberships[i]]
    return replace(pool, coefficients=new_b, memberships=new_s)


def _gumbel_argmax(logp: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Exact categorical draws along the last axis via the Gumbel-max trick."""
    return (logp + rng.gumbel(size=logp.shape)).argmax(axis=-1)


class _MonthState:
    """Mutable per-instance state while filtering one period's batch.

    Maintains incremental caches so each rejuvenation proposal costs
    O(prefix length) instead of a full likelihood recomputation:

    - ``mix_terms`` row m holds theta_{jmk} * p(y_m | B_jk) per group and
      ``mix_sums`` its group sum, i.e. the mixture likelihood of
      observation m under particle j;
    - ``slice_prior`` (t > 1 only) holds the per-group slice totals of
      log p(B_j | prev_h) for every previous-pool particle h, and
      ``log_prior_terms`` their group sums, so the Monte-Carlo marginal
      prior of a proposal differing in one group slice is an O(H * Q * P)
      update with the current state's value fully cached.
    """

    def __init__(self, coefficients, theta, memberships, covariates, lo, hi,
                 model: ModelSpec, prior, cfg: FilterConfig, prev_coeff_pool,
                 first_period: bool):
        self.b = coefficients
        self.theta = theta                      # read-only month draws
        self.theta_rows = np.arange(memberships.shape[0])
        self.s = memberships
        self.x = covariates
        self.lo = lo
        self.hi = hi
        self.model = model
        self.prior = prior
        self.cfg = cfg
        self.first_period = first_period
        j, n = memberships.shape
        self.j = j
        self.mix_terms = np.zeros((j, n, model.group_count))
        self.mix_sums = np.zeros((j, n))
        self.filled = 0
        if first_period:
            self.prev = None
            self.log_prior_terms = None
            self.trans_table = None
            self.slice_prior = None
            self.mixture_weights = None
        else:
            self.prev = np.asarray(prev_coeff_pool, dtype=float)
            h = self.prev.shape[0]
            k = model.group_count
            # per-(particle, previous particle, group) slice totals
            if hasattr(prior, "linear_mixture_parts"):
                self.mixture_weights = np.ascontiguousarray(
                    prior.linear_mixture_parts(self.prev))
                self.trans_table = None
                self.slice_prior = _kernels.mixture_prior_all(
                    self.mixture_weights,
                    prior.linear_component_densities(self.b))
            else:
                self.mixture_weights = None
                self.trans_table = prior.prepare_transition(self.prev)
                lt = prior.log_transition_with_table(self.trans_table[None],
                                                     self.b[:, None])
                self.slice_prior = lt.reshape(j, h, k, -1).sum(axis=3)
            self.log_prior_terms = self.slice_prior.sum(axis=2)

    def conditional_loglik(self, i: int) -> np.ndarray:
        """log p(y_i | B_j, s_ij) for every particle."""
        sel = self.b[np.arange(self.j), self.s[:, i]]
        mu = np.einsum("q,jqp->jp", self.x[i], sel)
        return log_cells(mu, self.lo[i], self.hi[i])

    def _theta_col(self, upto: int, k_star: np.ndarray) -> np.ndarray:
        """(J, upto) gather of theta_{j, m, k*_j} through the row indirection."""
        return self.theta[self.theta_rows[:, None],
                          np.arange(upto)[None, :], k_star[:, None]]

    def permute(self, idx: np.ndarray) -> None:
        f = self.filled
        self.b = self.b[idx]
        self.s = self.s[idx]
        self.theta_rows = self.theta_rows[idx]
        self.mix_terms[:, :f] = self.mix_terms[idx, :f]
        self.mix_sums[:, :f] = self.mix_sums[idx, :f]
        if self.log_prior_terms is not None:
            self.log_prior_terms = self.log_prior_terms[idx]
            self.slice_prior = self.slice_prior[idx]

    def append_observation(self, i: int) -> None:
        """Extend the mixture-likelihood caches with observation i."""
        mu = np.einsum("q,jkqp->jkp", self.x[i], self.b)
        cells = log_cells(mu, self.lo[i], self.hi[i])
        theta_i = self.theta[self.theta_rows, i, :]
        self.mix_terms[:, i, :] = theta_i * np.exp(cells)
        self.mix_sums[:, i] = self.mix_terms[:, i, :].sum(axis=1)
        self.filled = i + 1

    def rejuvenate(self, i: int, rng: np.random.Generator) -> int:
        """MH sweeps on the active group slice of each particle; returns accepts."""
        sweeps = self.cfg.sweeps_for(self.first_period)
        accepted = 0
        for _ in range(sweeps):
            accepted += self._sweep(i, rng)
        return accepted

    def _sweep(self, i: int, rng: np.random.Generator) -> int:
        j = self.j
        jj = np.arange(j)
        n1 = i + 1
        k_star = self.s[:, i]
        cur = self.b[jj, k_star]
        shape = cur.shape

        from_prior = rng.random(j) < self.cfg.proposal_mix
        prior_draw = self.prior.sample_initial_array(shape, rng)
        jitter_draw = cur + rng.normal(0.0, self.cfg.jitter_sd, size=shape)
        proposal = np.where(from_prior[:, None, None], prior_draw, jitter_draw)

        # prior factor of the target
        if self.first_period:
            d_init = (self.prior.log_initial_density(proposal)
                      - self.prior.log_initial_density(cur)).reshape(j, -1).sum(axis=1)
            delta_prior = d_init
            new_terms = None
            lt_new = None
        else:
            if self.mixture_weights is not None:
                kdens = self.prior.linear_component_densities(proposal)
                lt_new = _kernels.mixture_prior_rows(self.mixture_weights,
                                                     kdens, k_star)
            else:
                tbl = np.moveaxis(self.trans_table[:, k_star], 0, 1)
                lt_new = self.prior.log_transition_with_table(
                    tbl, proposal[:, None]).reshape(j, tbl.shape[1], -1).sum(axis=2)
            lt_cur = self.slice_prior[jj, :, k_star]
            new_terms = self.log_prior_terms + (lt_new - lt_cur)
            delta_prior = (_logsumexp_rows(new_terms)
                           - _logsumexp_rows(self.log_prior_terms))

        # accumulated mixture likelihood, replacing the active group column
        theta_col = self._theta_col(n1, k_star)
        terms_cur = self.mix_terms[jj[:, None], np.arange(n1)[None, :], k_star[:, None]]
        if _kernels.HAVE_NUMBA:
            terms_new, sums_new, delta_lik = _kernels.delta_likelihood(
                self.x[:n1], self.lo[:n1], self.hi[:n1], proposal, theta_col,
                self.mix_sums[:, :n1], terms_cur)
        else:
            mu_new = np.einsum("mq,jqp->jmp", self.x[:n1], proposal)
            cells_new = log_cells(mu_new, self.lo[:n1], self.hi[:n1])
            terms_new = theta_col * np.exp(cells_new)
            sums_new = np.maximum(self.mix_sums[:, :n1] - terms_cur + terms_new, 0.0)
            delta_lik = (np.log(np.maximum(sums_new, _CELL_FLOOR))
                         - np.log(np.maximum(self.mix_sums[:, :n1],
                                             _CELL_FLOOR))).sum(axis=1)

        # proposal correction: jitter is symmetric; prior draws use the
        # initial-mixture density on the modified slice
        delta_q = np.zeros(j)
        if np.any(from_prior):
            q_new = self.prior.log_initial_density(proposal).reshape(j, -1).sum(axis=1)
            q_cur = self.prior.log_initial_density(cur).reshape(j, -1).sum(axis=1)
            delta_q = np.where(from_prior, q_cur - q_new, 0.0)

        log_alpha = delta_prior + delta_lik + delta_q
        with np.errstate(divide="ignore"):
            accept = np.log(rng.random(j)) < log_alpha
        if np.any(accept):
            self.b[jj[accept], k_star[accept]] = proposal[accept]
            rows = jj[accept][:, None]
            cols = np.arange(n1)[None, :]
            self.mix_terms[rows, cols, k_star[accept][:, None]] = terms_new[accept]
            self.mix_sums[accept, :n1] = sums_new[accept]
            if new_terms is not None:
                self.log_prior_terms[accept] = new_terms[accept]
                self.slice_prior[jj[accept], :, k_star[accept]] = lt_new[accept]
        return int(accept.sum())


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    shift = a.max(axis=1)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    with np.errstate(divide="ignore"):
        return shift + np.log(np.exp(a - shift[:, None]).sum(axis=1))


def _filter_month(state: _MonthState, rng: np.random.Generator, cfg: FilterConfig,
                  period: int, instance_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Sequential update over the (already permuted) batch.

    Returns (final carried log weights, per-observation pre-resample ESS).
    """
    n = state.s.shape[1]
    j = state.j
    logw = np.zeros(j)
    ess_trace = np.empty(n)
    for i in range(n):
        ll = state.conditional_loglik(i)
        if np.all(ll <= LOG_PROB_FLOOR):
            raise FilterAbort(
                "all particle weights underflowed; observed response is "
                "impossible under every particle",
                period=period, instance=instance_id, observation=i)
        logw = logw + ll
        weights = normalize_log_weights(logw)
        ess_trace[i] = effective_sample_size(weights)
        if ess_trace[i] <= cfg.ess_threshold * j:
            idx = resample_indices(weights, rng, cfg.resampler)
            state.permute(idx)
            logw = np.zeros(j)
            state.append_observation(i)
            state.rejuvenate(i, rng)
        else:
            state.append_observation(i)
    return logw, ess_trace


def _instance_seed(cfg_seed: int, period: int, instance_id: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg_seed, int(period), int(instance_id)])


def run_instance_period(batch: PeriodBatch, model: ModelSpec, prior,
                        cfg: FilterConfig, prev_coefficients: np.ndarray | None,
                        h_pool: np.ndarray | None, instance_id: int) -> ParticlePool:
    """One instance's between-month step (Algorithm steps 1-5) for one period.

    ``prev_coefficients`` is the instance's previous-period coefficient stack
    (None for the first period); ``h_pool`` is the shared previous-pool
    subsample that the rejuvenation marginal prior averages over.
    """
    rng = np.random.default_rng(_instance_seed(cfg.seed, batch.period, instance_id))
    j = cfg.particles_per_instance
    k, q, p = model.coefficient_shape
    n = len(batch)
    first_period = prev_coefficients is None

    theta = draw_theta_matrix(batch.membership_priors, j, rng)
    if n:
        if theta.shape != (j, n, k):
            raise ContractViolation(
                f"membership priors produced theta of shape {theta.shape}, "
                f"expected {(j, n, k)}")
        with np.errstate(divide="ignore"):
            memberships = _gumbel_argmax(np.log(theta), rng)
    else:
        theta = np.zeros((j, 0, k))
        memberships = np.zeros((j, 0), dtype=int)

    if first_period:
        coefficients = prior.sample_initial_array((j, k, q, p), rng)
    else:
        if prev_coefficients.shape != (j, k, q, p):
            raise ContractViolation(
                f"previous coefficients shape {prev_coefficients.shape} != {(j, k, q, p)}")
        coefficients = prior.sample_transition_array(prev_coefficients, rng)
        if h_pool is None:
            h_pool = prev_coefficients

    if n == 0:
        return ParticlePool(coefficients, memberships, np.zeros(j),
                            period=batch.period, rng_seed=cfg.seed,
                            instance_id=instance_id)

    perm = rng.permutation(n)
    x = batch.covariate_matrix()[perm]
    lo, hi = threshold_bounds(model, batch.response_matrix()[perm])
    state = _MonthState(coefficients, theta[:, perm], memberships[:, perm],
                        x, lo, hi, model, prior, cfg, h_pool, first_period)
    logw, ess_trace = _filter_month(state, rng, cfg, batch.period, instance_id)

    pool = ParticlePool(state.b, memberships, logw, period=batch.period,
                        rng_seed=cfg.seed, instance_id=instance_id,
                        ess_trace=ess_trace)
    return update_memberships(pool, batch, model, rng)


def update_memberships(pool: ParticlePool, batch: PeriodBatch, model: ModelSpec,
                       rng: np.random.Generator) -> ParticlePool:
    """Month-end Gibbs refresh of memberships.

    Draws theta from each respondent's membership prior and then
    s_n = k with probability proportional to theta_k * p(y_n | B, k).
    """
    n = len(batch)
    if n == 0:
        return pool
    theta = draw_theta_matrix(batch.membership_priors, pool.size, rng)
    x = batch.covariate_matrix()
    lo, hi = threshold_bounds(model, batch.response_matrix())
    mu = np.einsum("nq,jkqp->jnkp", x, pool.coefficients)
    cells = log_cells(mu, lo[None, :, None, :], hi[None, :, None, :])
    with np.errstate(divide="ignore"):
        memberships = _gumbel_argmax(np.log(theta) + cells, rng)
    return replace(pool, memberships=memberships)


def within_month_filter(pool: ParticlePool, batch: PeriodBatch,
                        prev_coeff_pool: np.ndarray | None, model: ModelSpec,
                        prior, cfg: FilterConfig, rng: np.random.Generator,
                        theta: np.ndarray | None = None,
                        first_period: bool | None = None,
                        instance_id: int = 0) -> ParticlePool:
    """Within-month filtering of a pool already seeded from the prior.

    ``theta`` holds the month's per-particle topic-proportion draws (J, N, K);
    when omitted, fresh draws are taken from the batch's membership priors and
    the pool's memberships are resampled from them, since the two are always
    drawn as a pair at the start of the month. Observation order is permuted.
    """
    n = len(batch)
    if first_period is None:
        first_period = prev_coeff_pool is None
    if n == 0:
        return pool
    if theta is None:
        theta = draw_theta_matrix(batch.membership_priors, pool.size, rng)
        with np.errstate(divide="ignore"):
            pool = replace(pool, memberships=_gumbel_argmax(np.log(theta), rng))
    perm = rng.permutation(n)
    x = batch.covariate_matrix()[perm]
    lo, hi = threshold_bounds(model, batch.response_matrix()[perm])
    state = _MonthState(pool.coefficients.copy(), theta[:, perm],
                        pool.memberships[:, perm], x, lo, hi, model, prior,
                        cfg, prev_coeff_pool, first_period)
    logw, ess_trace = _filter_month(state, rng, cfg, batch.period, instance_id)
    out = ParticlePool(state.b, pool.memberships, logw, period=batch.period,
                       rng_seed=pool.rng_seed, instance_id=instance_id,
                       ess_trace=ess_trace)
    return update_memberships(out, batch, model, rng)


def rejuvenate_particle(particle: Particle, theta: np.ndarray, batch: PeriodBatch,
                        n_seen: int, prev_coeff_pool: np.ndarray | None,
                        model: ModelSpec, prior, cfg: FilterConfig,
                        rng: np.random.Generator) -> Particle:
    """MH rejuvenation of a single particle (cfg-many sweeps).

    ``theta`` is the particle's (N, K) topic-proportion draws and ``n_seen``
    the number of leading batch observations already filtered; the move
    touches only the group slice of observation ``n_seen - 1``.
    """
    if not 1 <= n_seen <= len(batch):
        raise ContractViolation(f"n_seen {n_seen} outside 1..{len(batch)}")
    x = batch.covariate_matrix()[:n_seen]
    lo, hi = threshold_bounds(model, batch.response_matrix()[:n_seen])
    state = _MonthState(particle.coefficients[None].copy(), theta[None, :n_seen],
                        particle.memberships[None, :n_seen], x, lo, hi, model,
                        prior, cfg, prev_coeff_pool, prev_coeff_pool is None)
    for i in range(n_seen):
        state.append_observation(i)
    state.rejuvenate(n_seen - 1, rng)
    return Particle(state.b[0], particle.memberships.copy(), particle.log_weight)


def between_month_step(pool_prev: ParticlePool | None, batch: PeriodBatch,
                       model: ModelSpec, prior, cfg: FilterConfig,
                       h_pool: np.ndarray | None = None,
                       reference: np.ndarray | None = None,
                       instance_id: int = 0) -> ParticlePool:
    """Single-instance period update: propagate, filter, optionally relabel.

    When ``h_pool`` is omitted, the previous pool's own coefficients serve as
    the marginal-prior sample. Because group labels are pinned to topic
    components by the membership priors, the returned pool keeps its natural
    labels; pass ``reference`` to canonicalize against an external array
    (reporting copies only — a relabeled pool must not seed the next period).
    """
    prev = None
    if pool_prev is not None and pool_prev.size:
        prev = pool_prev.coefficients
        if h_pool is None:
            h_pool = subsample_pool(prev, cfg.prev_pool_size,
                                    cfg.seed, batch.period)
    pool = run_instance_period(batch, model, prior, cfg, prev, h_pool, instance_id)
    if reference is not None:
        pool = relabel(pool, reference)
    return pool


def subsample_pool(coefficients: np.ndarray, cap: int, seed: int,
                   period: int, instance_id: int = 0) -> np.ndarray:
    """Deterministic subsample of a coefficient stack for the marginal prior.

    Each instance draws its own subsample so the Monte-Carlo error of the
    marginal-prior approximation decorrelates across instances and averages
    out in the merged pool.
    """
    total = coefficients.shape[0]
    if total <= cap:
        return coefficients
    rng = np.random.default_rng(np.random.SeedSequence(
        [seed, int(period), _HPOOL_STREAM + int(instance_id)]))
    idx = rng.choice(total, size=cap, replace=False)
    return coefficients[idx]


@dataclass
class PeriodResult:
    """Outcome of one period across all instances."""

    merged: ParticlePool
    instance_pools: list
    wall_seconds: float
    observations: int

    @property
    def per_observation_seconds(self) -> float:
        return self.wall_seconds / max(self.observations, 1)


def _worker(payload):
    batch, model, prior, cfg, prev, h_pool, instance_id = payload
    return run_instance_period(batch, model, prior, cfg, prev, h_pool, instance_id)


def _worker_count(cfg: FilterConfig) -> int:
    env = os.environ.get("PROBITMIX_WORKERS")
    if env:
        return max(1, int(env))
    return min(cfg.instances, os.cpu_count() or 1)


def run_parallel_instances(batches, model: ModelSpec, prior, cfg: FilterConfig,
                           initial_pools: list | None = None,
                           workers: int | None = None):
    """Run all instances through a stream of period batches.

    Returns a list of PeriodResult, one per batch, in order. ``initial_pools``
    resumes a run from a period boundary. Instances use per-(seed, period,
    instance) random streams, so the outcome is identical whether instances
    run serially or in worker processes.
    """
    m = cfg.instances
    if workers is None:
        workers = _worker_count(cfg)
    pools = initial_pools
    merged_prev = merge_pools(pools, cfg.seed) if pools else None
    results = []
    for batch in batches:
        start = time.monotonic()
        if pools is None:
            payloads = [(batch, model, prior, cfg, None, None, i) for i in range(m)]
        else:
            payloads = [(batch, model, prior, cfg, pools[i].coefficients,
                         subsample_pool(merged_prev.coefficients,
                                        cfg.prev_pool_size, cfg.seed,
                                        batch.period, i), i)
                        for i in range(m)]
        if workers > 1 and m > 1:
            with ProcessPoolExecutor(max_workers=min(workers, m)) as pool_exec:
                new_pools = list(pool_exec.map(_worker, payloads))
        else:
            new_pools = [_worker(p) for p in payloads]
        merged = merge_pools(new_pools, cfg.seed)
        wall = time.monotonic() - start
        results.append(PeriodResult(merged=merged, instance_pools=new_pools,
                                    wall_seconds=wall, observations=len(batch)))
        log.info("period %s: %d observations, %d x %d particles, %.2fs",
                 batch.period, len(batch), m, cfg.particles_per_instance, wall)
        pools = new_pools
        merged_prev = merged
    return results


def merge_pools(pools, seed: int) -> ParticlePool:
    """Concatenate instance pools into one reporting pool.

    Instances contribute equal total mass; within an instance the carried
    log weights are preserved (uniform under always-resample defaults).
    """
    with np.errstate(divide="ignore"):
        log_weights = np.concatenate(
            [np.log(p.normalized_weights()) for p in pools])
    return ParticlePool(
        coefficients=np.concatenate([p.coefficients for p in pools]),
        memberships=np.concatenate([p.memberships for p in pools]),
        log_weights=log_weights,
        period=pools[0].period,
        rng_seed=seed,
        instance_id=-1,
        ess_trace=np.concatenate([p.ess_trace for p in pools])
        if pools[0].ess_trace.size else np.zeros(0),
    )
