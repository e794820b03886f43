"""Rate estimation for partially observed stochastic epidemics."""

from .bootstrap import BootstrapConfig, BootstrapError, BootstrapResult, IntervalResult, bootstrap_t
from .core import (
    CaseRecord,
    DataError,
    IncompletePairError,
    KernelSpec,
    ObservationPattern,
    RateModel,
    SufficientStats,
    complete_loglik,
    index_case,
    pairwise_tau,
    sufficient_stats,
)
from .estimate import (
    EstimateResult,
    EstimationError,
    NoSecondaryInfectionWarning,
    estimate_rates,
    impute_beta_bar,
    impute_beta_tilde,
    impute_beta_tilde_group,
    impute_beta_tilde_kernel,
    mle_beta,
    mle_beta_group,
    mle_beta_kernel,
    mle_gamma,
    mle_gamma_group,
)
from .estimators import (
    BootstrapTInterval,
    DAMCMCSampler,
    GroupInfectionRateEstimator,
    InfectionRateEstimator,
    KernelInfectionRateEstimator,
    RemovalRateMLE,
)
from .exposure import (
    NoClosedFormError,
    PairObservation,
    expected_duration,
    expected_tau,
    expected_tau_matrix,
    hard_lemma_terms,
    mc_tau_oracle,
)
from .mcmc import Chain, PriorSpec, ess, run_chains, run_damcmc, split_rhat
from .simulate import ConditioningError, EventLog, conditional_simulate, simulate_seir_het, simulate_sir

__version__ = "0.1.0"
