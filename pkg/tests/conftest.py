import numpy as np
import pytest

from probitmix.membership import LogisticNormalPosterior, softmax_embed
from probitmix.model import ModelSpec, OutcomeSpec, PeriodBatch, Respondent
from probitmix.shrinkage import (NonlocalPrior, ShrinkagePriorSpec,
                                 compute_normalization)


@pytest.fixture(scope="session")
def prior_spec():
    """Benchmark hyperparameters: mu = -/+1.5, sigma = (0.75, 0.1, 0.75), xi = 2."""
    return ShrinkagePriorSpec()


@pytest.fixture(scope="session")
def norm(prior_spec):
    return compute_normalization(prior_spec)


@pytest.fixture(scope="session")
def nonlocal_prior(prior_spec):
    return NonlocalPrior(prior_spec)


@pytest.fixture(scope="session")
def tiny_model():
    """K=2, Q=1, P=1 with a 3-category outcome."""
    outcome = OutcomeSpec.from_thresholds("y", (-0.5, 0.5))
    return ModelSpec(outcomes=(outcome,), covariate_count=1, group_count=2)


def make_tiny_batches(seed, n_per_period=(6, 6), eta_sd=1.0, theta_cov=0.25):
    """Two-period K=2/Q=1/P=1 dataset with logistic-normal membership priors."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 424243]))
    tau = np.array([-0.5, 0.5])
    b_true = {1: np.array([1.2, -0.8]), 2: np.array([1.0, -1.0])}
    batches = []
    for period, n_t in zip((1, 2), n_per_period):
        respondents, priors = [], []
        for _ in range(n_t):
            eta = rng.normal(0.0, eta_sd, size=1)
            theta = softmax_embed(eta)
            s = int(rng.random() > theta[0])
            z = b_true[period][s] + rng.standard_normal()
            y = 1 + int(np.searchsorted(tau, z, side="left"))
            respondents.append(Respondent(covariates=[1.0], responses=[y],
                                          period=period))
            priors.append(LogisticNormalPosterior(eta, theta_cov * np.eye(1)))
        batches.append(PeriodBatch(period=period, respondents=respondents,
                                   membership_priors=priors))
    return batches


@pytest.fixture()
def tiny_batches():
    return make_tiny_batches(7)
