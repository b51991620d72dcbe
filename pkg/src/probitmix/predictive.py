"""Filtered predictive distributions, risk probabilities, and relative risks.

A profile is a hypothetical respondent: a covariate vector plus a membership
prior (logistic-normal posterior derived from their occupational text and
socio covariates). Its predictive pmf over the outcome lattice is obtained by
drawing one topic-proportion vector per particle, mixing the exact per-group
cell probabilities with those proportions, and averaging across the pool.
Memberships are marginalized analytically, which makes every reported
quantity invariant under relabeling of the pool.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .membership import LogisticNormalPosterior, draw_theta_matrix
from .model import ModelSpec, interval_prob
from .smc import ParticlePool


@dataclass(frozen=True)
class Profile:
    """Hypothetical subject: covariates, membership prior, display label."""

    covariates: np.ndarray
    membership_prior: LogisticNormalPosterior
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "covariates",
                           np.asarray(self.covariates, dtype=float))


@dataclass
class PredictivePmf:
    """Probability mass over the finite lattice of outcome vectors.

    ``support`` is an (L, P) integer array of 1-based category combinations
    in row-major order over the per-outcome category ranges; ``mass`` the
    matching probabilities; ``draws`` the number of particle draws used.
    """

    support: np.ndarray
    mass: np.ndarray
    draws: int

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=int)
        self.mass = np.asarray(self.mass, dtype=float)
        if self.support.shape[0] != self.mass.size:
            raise ContractViolation("support and mass lengths differ")
        if np.any(self.mass < -1e-15):
            raise ContractViolation("negative predictive mass")
        if abs(self.mass.sum() - 1.0) > 1e-9:
            raise ContractViolation(f"predictive mass sums to {self.mass.sum()!r}")

    def lookup(self, outcome_vector) -> float:
        match = np.all(self.support == np.asarray(outcome_vector, dtype=int), axis=1)
        idx = np.flatnonzero(match)
        if idx.size != 1:
            raise ContractViolation(f"outcome {outcome_vector} not in support")
        return float(self.mass[idx[0]])


def outcome_lattice(spec: ModelSpec) -> np.ndarray:
    """(L, P) array of all 1-based outcome combinations, row-major."""
    ranges = [range(1, c + 1) for c in spec.category_counts]
    return np.array(list(itertools.product(*ranges)), dtype=int)


def _group_cell_probs(x: np.ndarray, coefficients: np.ndarray,
                      spec: ModelSpec) -> np.ndarray:
    """Per-group probabilities of every lattice point: (J, K, L).

    Cell probabilities are exact normal-CDF differences per particle; no
    outcome sampling is involved.
    """
    mu = np.einsum("q,jkqp->jkp", x, coefficients)
    lattice = outcome_lattice(spec)
    probs = np.ones((coefficients.shape[0], coefficients.shape[1], lattice.shape[0]))
    for p, outcome in enumerate(spec.outcomes):
        tau = np.concatenate(([-np.inf], outcome.thresholds, [np.inf]))
        cats = lattice[:, p]
        lo = tau[cats - 1][None, None, :] - mu[:, :, p, None]
        hi = tau[cats][None, None, :] - mu[:, :, p, None]
        probs *= interval_prob(lo, hi)
    return probs


def profile_predictive(profile: Profile, pool: ParticlePool, spec: ModelSpec,
                       rng: np.random.Generator,
                       theta_draws: int = 1) -> PredictivePmf:
    """Pool-averaged predictive pmf for a profile.

    Per particle: draw theta from the profile's membership prior, form the
    group mixture of exact cell probabilities, then average over particles
    with the pool's weights. ``theta_draws`` > 1 averages several theta draws
    per particle.
    """
    if profile.covariates.shape != (spec.covariate_count,):
        raise ContractViolation(
            f"profile covariates {profile.covariates.shape} != ({spec.covariate_count},)")
    cell = _group_cell_probs(profile.covariates, pool.coefficients, spec)
    theta = draw_theta_matrix([profile.membership_prior] * theta_draws,
                              pool.size, rng)  # (J, draws, K)
    theta_mean = theta.mean(axis=1)
    per_particle = np.einsum("jk,jkl->jl", theta_mean, cell)
    weights = pool.normalized_weights()
    mass = weights @ per_particle
    mass = mass / mass.sum()
    return PredictivePmf(outcome_lattice(spec), mass, draws=pool.size * theta_draws)


def per_particle_risks(profile: Profile, pool: ParticlePool, spec: ModelSpec,
                       rng: np.random.Generator, outcome: int,
                       cutpoint: int) -> np.ndarray:
    """Per-particle P(y_p > cutpoint) values, for credible bands."""
    _check_cutpoint(spec, outcome, cutpoint)
    cell = _group_cell_probs(profile.covariates, pool.coefficients, spec)
    theta = draw_theta_matrix([profile.membership_prior], pool.size, rng)[:, 0, :]
    per_particle = np.einsum("jk,jkl->jl", theta, cell)
    per_particle /= per_particle.sum(axis=1, keepdims=True)
    above = outcome_lattice(spec)[:, outcome] > cutpoint
    return per_particle[:, above].sum(axis=1)


def _check_cutpoint(spec: ModelSpec, outcome: int, cutpoint: int) -> None:
    if not 0 <= outcome < spec.outcome_count:
        raise ContractViolation(f"outcome index {outcome} outside 0..{spec.outcome_count - 1}")
    c = spec.outcomes[outcome].categories
    if not 1 <= cutpoint <= c - 1:
        raise ContractViolation(
            f"cutpoint {cutpoint} outside 1..{c - 1} for outcome "
            f"{spec.outcomes[outcome].name!r}")


def risk_probability(pmf: PredictivePmf, spec: ModelSpec, outcome: int,
                     cutpoint: int) -> float:
    """Marginal probability that outcome ``outcome`` exceeds category ``cutpoint``.

    ``cutpoint`` is a 1-based category index in 1..C_p - 1.
    """
    _check_cutpoint(spec, outcome, cutpoint)
    above = pmf.support[:, outcome] > cutpoint
    return float(pmf.mass[above].sum())


def relative_risk(target: float, baseline: float) -> float:
    """target / baseline; a zero baseline is a contract violation."""
    if baseline <= 0.0:
        raise ContractViolation(f"baseline risk must be positive, got {baseline!r}")
    return target / baseline


def credible_band(values, level: float) -> tuple[float, float]:
    """Central empirical quantile band with linear interpolation."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ContractViolation("credible_band needs at least one value")
    if not 0.0 < level < 1.0:
        raise ContractViolation(f"level must lie in (0, 1), got {level!r}")
    alpha = 0.5 * (1.0 - level)
    lo, hi = np.quantile(values, [alpha, 1.0 - alpha], method="linear")
    return float(lo), float(hi)
