"""Spike-and-slab linear regression: evidence, exact and MCMC model posteriors,
local eigenvalue functionals, and numeric checks of the supporting bounds."""

__version__ = "0.1.0"

from .model_core import (EnumerationBudgetError, ModelIndex, ProblemInstance, RankDeficientError,
                         RegularityConstants, epsilon_n, generate_instance, load_instance,
                         save_instance)
from .priors import (ModelSelectionPrior, PriorSpec, SlabDist, SpikeDist, VariancePrior,
                     audit_assumption1, compute_z0n, default_prior, prior_from_mapping)
from .eigen import mnev, mnev_premise, mrev, msev, muev, united_lambda
from .inference import (SamplerConfig, exact_posterior, log_model_evidence, mcmc_sample,
                        summarize)
from .diagnostics import (chi2_norm_bounds, chi2_tail_bound, omega_event_frequency,
                          pelekis_bound, phi_statistics, posterior_ratio_bound, selection_rate)
