"""Moran-model simulation with exchangeable breeding, exact stationary laws and
infinite-population limits."""

from .breeding import (DPPrior, FiniteMixture, count_vectors, make_rng, mixture_conditional_sample,
                       polya_conditional_sample, predictive_pmf, prior_exact_law)
from .chain import (ChainConfig, SampleSet, exact_stationary_counts, exact_stationary_mixture,
                    ordered_stationary_pmf, qn_samples, run_chain)
from .limits import (HypothesisError, IndeterminateError, LimitResult, check_marta, check_marta2,
                     critical_exponent, elementary_max_bound, limit_fixed_prior,
                     limit_measure_frac, limit_measure_lambda0, limit_prior_lambda1, objective_F,
                     power_product_limit, solve_theta_frac, solve_theta_lambda0, theta_residuals)
from .measures import (FiniteSpace, FiniteTable, FitnessSpec, MeasureRepr, PowerDistance,
                       QuadratureError, TabulatedInterval, UnitInterval, integrate, ks_samples,
                       ks_statistic, relative_entropy, tv_distance, wasserstein1, weight_at)
from .selection import exact_transition_matrix, inverse_fitness_step, tournament_step
from .verify import (detailed_balance_residual, mcmc_vs_exact, predicted_limit, spearman_trend,
                     sweep_convergence)

__version__ = "0.1.0"
