"""Ordinal-probit mixture likelihood and the period/covariate/outcome data model.

Each respondent carries a covariate vector x (length Q), an ordinal response
vector y (length P, categories coded 1..C_p), and a period index. Conditional
on group k, the latent response is Gaussian with mean x @ B[k] and identity
covariance, so the probability of observing category c for outcome p is a
difference of standard-normal CDFs at the outcome's thresholds. The latent
vector is never sampled; everything below works with the closed-form cell
probabilities.

Group indices are 0-based throughout the code base (numpy convention);
ordinal categories are 1-based because that is how they appear in data files.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import ContractViolation

# Floor for log cell probabilities. exp(-745) is the smallest positive
# double, so flooring here keeps downstream weight normalization finite
# without changing any representable probability.
LOG_PROB_FLOOR = -745.0


def norm_cdf(x):
    """Standard normal CDF. Single numeric kernel shared by all likelihoods.

    Delegates to scipy's erf-based ``ndtr`` (absolute error below 1e-15).
    """
    return ndtr(x)


def interval_prob(a, b):
    """P(a < Z <= b) for standard normal Z, accurate in both tails.

    When the interval sits in the upper tail, evaluates the mirrored
    difference ndtr(-a) - ndtr(-b) to avoid cancellation near 1. Arguments
    are selected before the two CDF evaluations, so each cell costs exactly
    two ndtr calls.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mirror = a > 0.0
    hi = np.where(mirror, -a, b)
    lo = np.where(mirror, -b, a)
    return ndtr(hi) - ndtr(lo)


@dataclass(frozen=True)
class OutcomeSpec:
    """One ordinal outcome: category count and fixed cutpoint vector.

    ``thresholds`` holds (tau_1, ..., tau_{C-1}); tau_0 = -inf and
    tau_C = +inf are implicit.
    """

    name: str
    categories: int
    thresholds: tuple[float, ...]

    def __post_init__(self):
        if self.categories < 2:
            raise ContractViolation(
                f"outcome {self.name!r}: needs >= 2 categories, got {self.categories}")
        if len(self.thresholds) != self.categories - 1:
            raise ContractViolation(
                f"outcome {self.name!r}: {self.categories} categories require "
                f"{self.categories - 1} thresholds, got {len(self.thresholds)}")
        tau = np.asarray(self.thresholds, dtype=float)
        if not np.all(np.isfinite(tau)):
            raise ContractViolation(f"outcome {self.name!r}: thresholds must be finite")
        if np.any(np.diff(tau) <= 0):
            raise ContractViolation(
                f"outcome {self.name!r}: thresholds must be strictly increasing")

    @classmethod
    def from_thresholds(cls, name, thresholds):
        thresholds = tuple(float(t) for t in thresholds)
        return cls(name=name, categories=len(thresholds) + 1, thresholds=thresholds)

    def bounds(self, c: int) -> tuple[float, float]:
        """(tau_{c-1}, tau_c) for 1-based category c, with infinite ends."""
        if not 1 <= c <= self.categories:
            raise ContractViolation(
                f"outcome {self.name!r}: category {c} out of range 1..{self.categories}")
        tau = self.thresholds
        lo = -np.inf if c == 1 else tau[c - 2]
        hi = np.inf if c == self.categories else tau[c - 1]
        return lo, hi


@dataclass(frozen=True)
class ModelSpec:
    """Dimensions of the mixture: P outcomes, Q covariates, K groups."""

    outcomes: tuple[OutcomeSpec, ...]
    covariate_count: int
    group_count: int

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        if len(self.outcomes) < 1:
            raise ContractViolation("model needs at least one outcome")
        if self.covariate_count < 1:
            raise ContractViolation("covariate_count must be >= 1")
        if self.group_count < 1:
            raise ContractViolation("group_count must be >= 1")

    @property
    def outcome_count(self) -> int:
        return len(self.outcomes)

    @property
    def coefficient_shape(self) -> tuple[int, int, int]:
        """(K, Q, P) shape of a coefficient array."""
        return (self.group_count, self.covariate_count, self.outcome_count)

    @property
    def category_counts(self) -> tuple[int, ...]:
        return tuple(o.categories for o in self.outcomes)


def validate_coefficients(values, spec: ModelSpec) -> np.ndarray:
    """Check a (K, Q, P) coefficient array against the model dimensions."""
    arr = np.asarray(values, dtype=float)
    if arr.shape != spec.coefficient_shape:
        raise ContractViolation(
            f"coefficient array shape {arr.shape} != {spec.coefficient_shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("coefficient array has non-finite entries")
    return arr


@dataclass(frozen=True)
class Respondent:
    """One observation: covariates x, 1-based ordinal responses y, period t."""

    covariates: np.ndarray
    responses: np.ndarray
    period: int

    def __post_init__(self):
        object.__setattr__(self, "covariates", np.asarray(self.covariates, dtype=float))
        object.__setattr__(self, "responses", np.asarray(self.responses, dtype=int))

    def validate(self, spec: ModelSpec) -> None:
        if self.covariates.shape != (spec.covariate_count,):
            raise ContractViolation(
                f"covariate length {self.covariates.shape} != ({spec.covariate_count},)")
        if self.responses.shape != (spec.outcome_count,):
            raise ContractViolation(
                f"response length {self.responses.shape} != ({spec.outcome_count},)")
        for p, outcome in enumerate(spec.outcomes):
            c = self.responses[p]
            if not 1 <= c <= outcome.categories:
                raise ContractViolation(
                    f"response {c} for outcome {outcome.name!r} outside 1..{outcome.categories}")


@dataclass
class PeriodBatch:
    """All respondents arriving in one period, with their membership priors.

    ``membership_priors`` is aligned one-to-one with ``respondents``; each
    entry is a LogisticNormalPosterior (see probitmix.membership) describing
    the externally estimated topic-proportion posterior for that respondent.
    """

    period: int
    respondents: list = field(default_factory=list)
    membership_priors: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.respondents) != len(self.membership_priors):
            raise ContractViolation(
                f"period {self.period}: {len(self.respondents)} respondents vs "
                f"{len(self.membership_priors)} membership priors")
        for r in self.respondents:
            if r.period != self.period:
                raise ContractViolation(
                    f"respondent period {r.period} != batch period {self.period}")

    def __len__(self) -> int:
        return len(self.respondents)

    def covariate_matrix(self) -> np.ndarray:
        if not self.respondents:
            return np.zeros((0, 0))
        return np.stack([r.covariates for r in self.respondents])

    def response_matrix(self) -> np.ndarray:
        if not self.respondents:
            return np.zeros((0, 0), dtype=int)
        return np.stack([r.responses for r in self.respondents])


def latent_mean(x, coefficients, k: int) -> np.ndarray:
    """Mean x @ B[k] of the latent Gaussian given group k (0-based)."""
    x = np.asarray(x, dtype=float)
    b = np.asarray(coefficients, dtype=float)
    if b.ndim != 3 or x.shape != (b.shape[1],):
        raise ContractViolation(
            f"covariate length {x.shape} incompatible with coefficients {b.shape}")
    if not 0 <= k < b.shape[0]:
        raise ContractViolation(f"group index {k} outside 0..{b.shape[0] - 1}")
    return x @ b[k]


def cell_probability(mu_p: float, spec: OutcomeSpec, c: int) -> float:
    """P(y_p = c | mu_p) = Phi(tau_c - mu) - Phi(tau_{c-1} - mu)."""
    lo, hi = spec.bounds(c)
    return float(interval_prob(lo - mu_p, hi - mu_p))


def respondent_loglik(r: Respondent, coefficients, k: int, spec: ModelSpec) -> float:
    """Log-likelihood of one respondent's responses under group k.

    Outcomes are conditionally independent given the group (identity latent
    covariance), so this is the sum of per-outcome log cell probabilities.
    Underflowing cells are floored at LOG_PROB_FLOOR instead of returning
    -inf, so the result is always finite.
    """
    mu = latent_mean(r.covariates, coefficients, k)
    total = 0.0
    for p, outcome in enumerate(spec.outcomes):
        prob = cell_probability(mu[p], outcome, int(r.responses[p]))
        total += max(np.log(prob) if prob > 0.0 else -np.inf, LOG_PROB_FLOOR)
    return total


def marginal_loglik(r: Respondent, coefficients, theta, spec: ModelSpec) -> float:
    """log sum_k theta_k * exp(loglik_k), max-shifted for stability.

    ``theta`` must lie on the K-simplex (tolerance 1e-9).
    """
    theta = np.asarray(theta, dtype=float)
    b = np.asarray(coefficients, dtype=float)
    if theta.shape != (b.shape[0],):
        raise ContractViolation(f"theta length {theta.shape} != group count {b.shape[0]}")
    if np.any(theta < -1e-9) or abs(theta.sum() - 1.0) > 1e-9:
        raise ContractViolation(f"theta not on the simplex: sum={theta.sum()!r}")
    logliks = np.array([respondent_loglik(r, b, k, spec) for k in range(b.shape[0])])
    with np.errstate(divide="ignore"):
        terms = np.log(theta) + logliks
    shift = terms.max()
    return float(shift + np.log(np.exp(terms - shift).sum()))


# --- vectorized likelihood machinery used by the filter and the oracle ---


def threshold_bounds(spec: ModelSpec, responses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-observation (lower, upper) threshold arrays for given responses.

    ``responses`` is (N, P) of 1-based categories; returns two (N, P) float
    arrays (lo, hi) such that the cell probability is
    interval_prob(lo - mu, hi - mu).
    """
    responses = np.asarray(responses, dtype=int)
    n, p = responses.shape
    lo = np.empty((n, p))
    hi = np.empty((n, p))
    for j, outcome in enumerate(spec.outcomes):
        tau = np.concatenate(([-np.inf], outcome.thresholds, [np.inf]))
        c = responses[:, j]
        if np.any(c < 1) or np.any(c > outcome.categories):
            raise ContractViolation(f"responses for outcome {outcome.name!r} out of range")
        lo[:, j] = tau[c - 1]
        hi[:, j] = tau[c]
    return lo, hi


def log_cells(mu: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Floored log cell probabilities, summed over the trailing outcome axis.

    ``mu`` broadcasts against (N, P) bounds; the outcome axis is the last one.
    """
    with np.errstate(divide="ignore"):
        logp = np.log(interval_prob(lo - mu, hi - mu))
    return np.maximum(logp, LOG_PROB_FLOOR).sum(axis=-1)
