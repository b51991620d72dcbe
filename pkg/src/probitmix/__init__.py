"""Online Bayesian inference for dynamic mixtures of ordered-probit regressions.

Group membership is informed by externally estimated logistic-normal topic
posteriors, regression coefficients follow a dynamic non-local spike-and-slab
process, and inference runs as a two-level sequential Monte Carlo filter with
Metropolis-Hastings rejuvenation.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, ContractViolation, FilterAbort,
                     IntegrityError, NumericError)
from .membership import (DocumentCounts, LogisticNormalPosterior, StmHyper,
                         laplace_theta_posterior, sample_membership,
                         sample_theta, softmax_embed, word_loglik)
from .model import (ModelSpec, OutcomeSpec, PeriodBatch, Respondent,
                    cell_probability, latent_mean, marginal_loglik,
                    respondent_loglik)
from .predictive import (PredictivePmf, Profile, credible_band,
                         profile_predictive, relative_risk, risk_probability)
from .shrinkage import (GaussianRandomWalkPrior, NonlocalPrior,
                        ShrinkagePriorSpec, SlabNormalization,
                        compute_normalization, marginal_prior_log_density,
                        omega, sample_initial, sample_transition,
                        slab_kernel_density, transition_density,
                        transition_weights)
from .smc import (FilterConfig, Particle, ParticlePool, between_month_step,
                  compute_weights, distinct_effective_size,
                  effective_sample_size, merge_pools, rejuvenate_particle,
                  relabel, resample, run_parallel_instances,
                  update_memberships, within_month_filter)
from .synthetic import (GridSpec, ScenarioSpec, SyntheticTruth,
                        brute_force_posterior, discrete_kl, generate_scenario)
