"""Scikit-learn style estimator objects wrapping the functional API.

``X`` is either a sequence of :class:`~epirates.core.CaseRecord` or an
``(n, 2)`` array of ``[infection_time, removal_time]`` rows with NaN for a
missing endpoint. Array rows get ids ``1..n``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_array

from .bootstrap import BootstrapConfig, bootstrap_t
from .core import CaseRecord, KernelSpec
from .estimate import (
    DEFAULT_MC_SAMPLES,
    estimate_rates,
    mle_gamma,
    mle_gamma_group,
)
from .mcmc import PriorSpec, ess, run_chains, split_rhat


def check_cases(X) -> list[CaseRecord]:
    """Validate ``X`` and return it as a list of case records."""
    if isinstance(X, (list, tuple)) and X and all(isinstance(c, CaseRecord) for c in X):
        ids = [c.id for c in X]
        if len(set(ids)) != len(ids):
            raise ValueError("case ids must be unique")
        return list(X)
    arr = check_array(X, dtype=float, ensure_all_finite="allow-nan")
    if arr.shape[1] != 2:
        raise ValueError(f"expected 2 columns [infection, removal], got {arr.shape[1]}")
    if np.any(np.isinf(arr)):
        raise ValueError("times must be finite or NaN")
    return [
        CaseRecord(
            id=pos + 1,
            infection_time=None if np.isnan(i) else float(i),
            removal_time=None if np.isnan(r) else float(r),
        )
        for pos, (i, r) in enumerate(arr)
    ]


class RemovalRateMLE(BaseEstimator):
    """Removal-rate MLE from fully observed infectious periods.

    Attributes
    ----------
    gamma_ : float or dict
        Estimate, keyed by removal group when ``by_group`` is set.
    n_calibration_ : int
        Number of fully observed periods used.
    """

    def __init__(self, erlang_shape: int = 1, by_group: bool = False):
        self.erlang_shape = erlang_shape
        self.by_group = by_group

    def fit(self, X, y=None):
        cases = check_cases(X)
        if self.by_group:
            self.gamma_ = mle_gamma_group(cases, self.erlang_shape)
        else:
            self.gamma_ = mle_gamma(cases, self.erlang_shape)
        self.n_calibration_ = sum(c.is_complete for c in cases)
        return self


class InfectionRateEstimator(BaseEstimator):
    """Homogeneous infection-rate estimate (``"mle"``, ``"tilde"`` or ``"bar"``).

    ``gamma`` defaults to the calibrated removal-rate MLE.

    Attributes
    ----------
    beta_, gamma_, R0_ : float
    result_ : EstimateResult
    """

    def __init__(
        self,
        population_size: int = 100,
        method: str = "tilde",
        erlang_shape: int = 1,
        incubation: float = 0.0,
        gamma=None,
        fallback: str = "raise",
        mc_samples: int = DEFAULT_MC_SAMPLES,
        random_state=None,
    ):
        self.population_size = population_size
        self.method = method
        self.erlang_shape = erlang_shape
        self.incubation = incubation
        self.gamma = gamma
        self.fallback = fallback
        self.mc_samples = mc_samples
        self.random_state = random_state

    def _extra(self):
        return {}

    def fit(self, X, y=None):
        cases = check_cases(X)
        self.result_ = estimate_rates(
            cases,
            self.population_size,
            method=self.method,
            m=self.erlang_shape,
            delta=self.incubation,
            gamma=self.gamma,
            fallback=self.fallback,
            mc_samples=self.mc_samples,
            seed=self.random_state,
            **self._extra(),
        )
        self.beta_ = self.result_.value
        self.gamma_ = self.result_.gamma
        self.R0_ = self.result_.R0
        return self


class GroupInfectionRateEstimator(InfectionRateEstimator):
    """Infection rates per susceptible infection group.

    ``group_sizes`` maps each group to its population count. Requires
    :class:`CaseRecord` input carrying ``infection_group``.
    """

    def __init__(
        self,
        population_size: int = 100,
        group_sizes=None,
        method: str = "tilde",
        erlang_shape: int = 1,
        incubation: float = 0.0,
        gamma=None,
        removal_groups: bool = False,
        fallback: str = "raise",
        mc_samples: int = DEFAULT_MC_SAMPLES,
        random_state=None,
    ):
        super().__init__(population_size, method, erlang_shape, incubation, gamma, fallback, mc_samples, random_state)
        self.group_sizes = group_sizes
        self.removal_groups = removal_groups

    def _extra(self):
        if not self.group_sizes:
            raise ValueError("group_sizes is required")
        return {"group_sizes": self.group_sizes, "removal_groups": self.removal_groups}


class KernelInfectionRateEstimator(InfectionRateEstimator):
    """Baseline infection rate for pairwise rates ``beta * h(x_k, x_j) / N``.

    Requires :class:`CaseRecord` input with locations, plus the locations of
    the never-infected individuals.
    """

    def __init__(
        self,
        population_size: int = 100,
        kernel: KernelSpec | None = None,
        susceptible_locations=None,
        method: str = "tilde",
        erlang_shape: int = 1,
        incubation: float = 0.0,
        gamma=None,
        fallback: str = "raise",
        mc_samples: int = DEFAULT_MC_SAMPLES,
        random_state=None,
    ):
        super().__init__(population_size, method, erlang_shape, incubation, gamma, fallback, mc_samples, random_state)
        self.kernel = kernel
        self.susceptible_locations = susceptible_locations

    def _extra(self):
        return {
            "kernel": self.kernel or KernelSpec(),
            "susceptible_locations": self.susceptible_locations,
        }


class BootstrapTInterval(BaseEstimator):
    """Studentized double bootstrap intervals for ``beta`` and ``R0``.

    Attributes
    ----------
    result_ : BootstrapResult
    interval_ : tuple of float
        ``(lower, upper)`` for ``beta``.
    midpoint_ : float
    """

    def __init__(
        self,
        population_size: int = 100,
        erlang_shape: int = 1,
        incubation: float = 0.0,
        B_out: int = 200,
        B_in: int = 20,
        se_reps: int = 100,
        omega: float = 0.1,
        alpha: float = 0.05,
        p_missing: float = 0.2,
        p_inf_missing: float = 0.8,
        missingness: str = "binomial",
        random_state=None,
    ):
        self.population_size = population_size
        self.erlang_shape = erlang_shape
        self.incubation = incubation
        self.B_out = B_out
        self.B_in = B_in
        self.se_reps = se_reps
        self.omega = omega
        self.alpha = alpha
        self.p_missing = p_missing
        self.p_inf_missing = p_inf_missing
        self.missingness = missingness
        self.random_state = random_state

    def fit(self, X, y=None):
        cases = check_cases(X)
        cfg = BootstrapConfig(
            B_out=self.B_out,
            B_in=self.B_in,
            se_reps=self.se_reps,
            omega=self.omega,
            alpha=self.alpha,
            p_missing=self.p_missing,
            p_inf_missing=self.p_inf_missing,
            seed=self.random_state,
            missingness=self.missingness,
        )
        self.result_ = bootstrap_t(
            cases, self.population_size, m=self.erlang_shape, delta=self.incubation, config=cfg
        )
        self.interval_ = (self.result_.beta.lower, self.result_.beta.upper)
        self.midpoint_ = self.result_.beta.midpoint
        return self


class DAMCMCSampler(BaseEstimator):
    """Data-augmented MCMC over ``(beta, gamma)`` and missing endpoints.

    Attributes
    ----------
    chains_ : list of Chain
    posterior_mean_ : dict
        Means of ``beta``, ``gamma`` and ``R0`` after burn-in, pooled over chains.
    rhat_, ess_ : dict
        Diagnostics per parameter (``rhat_`` only with several chains).
    """

    def __init__(
        self,
        population_size: int = 100,
        erlang_shape: int = 1,
        incubation: float = 0.0,
        xi_beta: float = 1.0,
        zeta_beta: float = 1.0,
        xi_gamma: float = 1.0,
        zeta_gamma: float = 1.0,
        n_iter: int = 1000,
        n_attempts=None,
        burn_in: int = 0,
        n_chains: int = 1,
        random_state=None,
    ):
        self.population_size = population_size
        self.erlang_shape = erlang_shape
        self.incubation = incubation
        self.xi_beta = xi_beta
        self.zeta_beta = zeta_beta
        self.xi_gamma = xi_gamma
        self.zeta_gamma = zeta_gamma
        self.n_iter = n_iter
        self.n_attempts = n_attempts
        self.burn_in = burn_in
        self.n_chains = n_chains
        self.random_state = random_state

    def fit(self, X, y=None):
        cases = check_cases(X)
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("burn_in must lie in [0, n_iter)")
        prior = PriorSpec(self.xi_beta, self.zeta_beta, self.xi_gamma, self.zeta_gamma)
        self.chains_ = run_chains(
            cases,
            self.population_size,
            n_chains=self.n_chains,
            seed=self.random_state,
            prior=prior,
            m=self.erlang_shape,
            delta=self.incubation,
            T1=self.n_iter,
            T2=self.n_attempts,
        )
        b = self.burn_in
        draws = {
            "beta": np.array([c.beta[b:] for c in self.chains_]),
            "gamma": np.array([c.gamma[b:] for c in self.chains_]),
            "R0": np.array([c.R0[b:] for c in self.chains_]),
        }
        self.posterior_mean_ = {k: float(v.mean()) for k, v in draws.items()}
        self.ess_ = {k: ess(v) for k, v in draws.items()}
        self.rhat_ = {k: split_rhat(v) for k, v in draws.items()} if self.n_chains > 1 else {}
        return self
