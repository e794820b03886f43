"""Point estimators of the infection and removal rates.

The removal rate is calibrated on fully observed infectious periods only.
The infection rate estimators share one denominator form,

    sum_k sum_j E[tau_kj] + (N - n) * sum_j E[r_j - i_j],

evaluated on observed values (MLE), on mean-filled endpoints (``bar``) or on
conditional expectations (``tilde``). All of them sum every ordered pair of
infected cases in a fixed order, so they agree bit-for-bit on complete data.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Hashable

import numpy as np

from . import _kernels as K
from .core import CaseRecord, DataError, IncompletePairError, KernelSpec, cases_to_arrays, index_case
from .exposure import DEFAULT_MC_SAMPLES, expected_tau_matrix, removal_rates_for


class EstimationError(ValueError):
    """The estimator is undefined for these data."""


class NoSecondaryInfectionWarning(UserWarning):
    """An infection rate was set to 0 because no secondary infection was observed."""


ESTIMATORS = (
    "gamma_mle",
    "beta_mle",
    "beta_tilde",
    "beta_bar",
    "beta_group",
    "beta_kernel",
    "gamma_group",
)


@dataclass(frozen=True)
class EstimateResult:
    """A point estimate with its paired removal rate and bookkeeping."""

    estimator: str
    value: float | dict
    gamma: float | dict | None = None
    R0: float | dict | None = None
    calibration_count: int = 0
    n: int = 0
    N: int = 0
    seed: int | None = None
    flags: tuple[str, ...] = ()
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")


def _require_nonempty(cases):
    if len(cases) == 0:
        raise DataError("no cases")


def _check_population(cases, N):
    if N < len(cases):
        raise DataError(f"population size {N} smaller than epidemic size {len(cases)}")


def complete_subset(cases: Sequence[CaseRecord]) -> list[CaseRecord]:
    return [c for c in cases if c.is_complete]


def mle_gamma(cases: Sequence[CaseRecord], m: int = 1) -> float:
    """``m * n_C / sum(r_j - i_j)`` over fully observed cases only.

    Examples
    --------
    >>> mle_gamma([CaseRecord(1, infection_time=0.0, removal_time=4.0)], m=2)
    0.5
    """
    g = K.calibrated_gamma(*cases_to_arrays(cases)[1:], int(m))
    if math.isnan(g):
        raise EstimationError("no complete infectious periods")
    return g


def mle_gamma_group(cases: Sequence[CaseRecord], m: int = 1) -> dict:
    """Removal-rate MLE per removal group, from fully observed cases."""
    labels = []
    for c in cases:
        if c.removal_group not in labels:
            labels.append(c.removal_group)
    out = {}
    for g in labels:
        members = [c for c in cases if c.removal_group == g]
        try:
            out[g] = mle_gamma(members, m)
        except EstimationError:
            raise EstimationError(f"removal group {g!r} has no complete infectious periods") from None
    return out


def removal_only_pair_sum(count: int, gamma: float) -> float:
    """Total expected exposure among ``count`` removal-only cases with equal rates.

    Each unordered pair contributes ``1 / gamma`` over its two orderings.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return count * (count - 1) / (2.0 * gamma)


def _durations(inf, rem, gammas, m):
    return K.expected_durations(inf, rem, gammas, int(m))


def _ratio(numer, denom, what):
    if numer == 0:
        warnings.warn(f"{what}: no secondary infections, estimate set to 0", NoSecondaryInfectionWarning)
        return 0.0
    if not denom > 0:
        raise EstimationError(f"{what}: exposure denominator is zero")
    return numer / denom


def _homogeneous(inf, rem, gammas, m, delta, N, fallback, mc_samples, seed, what):
    n = inf.shape[0]
    M = expected_tau_matrix(inf, rem, gammas, m, delta, fallback, mc_samples, seed)
    dur = _durations(inf, rem, gammas, m)
    denom = K.ordered_sum(M) + (N - n) * K.ordered_sum(dur)
    return _ratio((n - 1) * N, denom, what)


def _complete_arrays(cases):
    _require_nonempty(cases)
    for c in cases:
        if not c.is_complete:
            raise IncompletePairError(f"case {c.id} is not fully observed")
    return cases_to_arrays(cases)


def mle_beta(cases: Sequence[CaseRecord], N: int, delta: float = 0.0) -> float:
    """Complete-data infection-rate MLE.

    Returns 0 with a :class:`NoSecondaryInfectionWarning` when only the index
    case was infected.
    """
    _, inf, rem = _complete_arrays(cases)
    _check_population(cases, N)
    return _homogeneous(inf, rem, np.ones(len(cases)), 1, delta, N, "raise", 0, None, "beta_mle")


def impute_beta_tilde(
    cases: Sequence[CaseRecord],
    N: int,
    gamma: float | Mapping,
    m: int = 1,
    delta: float = 0.0,
    fallback: str = "raise",
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed=None,
) -> float:
    """Infection-rate estimate with exposures replaced by conditional expectations.

    Parameters
    ----------
    cases : sequence of CaseRecord
        Every infected case, each with at least one endpoint.
    N : int
        Population size.
    gamma : float or mapping
        Removal rate, or rates keyed by removal group.
    m : int
        Erlang shape of the infectious period.
    delta : float
        Fixed incubation period.
    fallback : {"raise", "mc"}
        What to do for pairs without a closed-form expectation.
    """
    _require_nonempty(cases)
    _check_population(cases, N)
    _, inf, rem = cases_to_arrays(cases)
    gammas = removal_rates_for(cases, gamma)
    return _homogeneous(inf, rem, gammas, m, delta, N, fallback, mc_samples, seed, "beta_tilde")


def fill_endpoints(cases: Sequence[CaseRecord], gamma: float | Mapping, m: int = 1) -> list[CaseRecord]:
    """Fill each missing endpoint with the observed one shifted by ``m / gamma``."""
    gammas = removal_rates_for(cases, gamma)
    out = []
    for c, g in zip(cases, gammas):
        i, r = c.infection_time, c.removal_time
        if i is None:
            i = r - m / g
        elif r is None:
            r = i + m / g
        out.append(
            CaseRecord(c.id, c.exposure_time, i, r, c.infection_group, c.removal_group, c.location)
        )
    return out


def impute_beta_bar(
    cases: Sequence[CaseRecord], N: int, gamma: float | Mapping, m: int = 1, delta: float = 0.0
) -> float:
    """Complete-data MLE applied after mean-duration endpoint filling."""
    _require_nonempty(cases)
    _check_population(cases, N)
    _, inf, rem = cases_to_arrays(cases)
    gammas = removal_rates_for(cases, gamma)
    fi, fr = _fill_arrays(inf, rem, gammas, m)
    return _homogeneous(fi, fr, np.ones(len(cases)), 1, delta, N, "raise", 0, None, "beta_bar")


def _fill_arrays(inf, rem, gammas, m):
    fi = np.where(np.isnan(inf), rem - m / gammas, inf)
    fr = np.where(np.isnan(rem), inf + m / gammas, rem)
    return fi, fr


# ------------------------------------------------------------------ groups


def _group_members(cases, group_sizes):
    idx = index_case(cases)
    labels = list(group_sizes)
    members = {g: [] for g in labels}
    for pos, c in enumerate(cases):
        g = c.infection_group
        if g in members:
            members[g].append(pos)
        elif pos != idx:
            raise DataError(f"case {c.id} has infection group {g!r} without a group size")
    return idx, members


def _group_rates(cases, N, group_sizes, M, dur, what):
    if sum(int(v) for v in group_sizes.values()) != N:
        raise DataError("group sizes must add up to the population size")
    idx, members = _group_members(cases, group_sizes)
    out = {}
    for g, pos in members.items():
        never = int(group_sizes[g]) - len(pos)
        if never < 0:
            raise DataError(f"group {g!r} has more cases than its size")
        n_g = len(pos) - (idx in pos)
        cols = np.asarray(pos, dtype=np.int64)
        denom = K.ordered_sum(np.ascontiguousarray(M[:, cols])) + never * K.ordered_sum(dur)
        out[g] = _ratio(n_g * N, denom, f"{what} group {g!r}")
    return out


def mle_beta_group(
    cases: Sequence[CaseRecord], N: int, group_sizes: Mapping[Hashable, int], delta: float = 0.0
) -> dict:
    """Infection-rate MLE for each susceptible infection group.

    ``group_sizes`` gives each group's full population count, including any
    infected members and the index case. The index case is neither counted
    as an infection nor as a never-infected member of its group.
    """
    _, inf, rem = _complete_arrays(cases)
    _check_population(cases, N)
    ones = np.ones(len(cases))
    M = expected_tau_matrix(inf, rem, ones, 1, delta)
    dur = _durations(inf, rem, ones, 1)
    return _group_rates(cases, N, group_sizes, M, dur, "beta_group")


def impute_beta_tilde_group(
    cases: Sequence[CaseRecord],
    N: int,
    group_sizes: Mapping[Hashable, int],
    gamma: float | Mapping,
    m: int = 1,
    delta: float = 0.0,
    fallback: str = "raise",
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed=None,
) -> dict:
    """Group-specific infection rates with imputed exposures."""
    _require_nonempty(cases)
    _check_population(cases, N)
    _, inf, rem = cases_to_arrays(cases)
    gammas = removal_rates_for(cases, gamma)
    M = expected_tau_matrix(inf, rem, gammas, m, delta, fallback, mc_samples, seed)
    dur = _durations(inf, rem, gammas, m)
    return _group_rates(cases, N, group_sizes, M, dur, "beta_group")


# ------------------------------------------------------------------ kernel


def _kernel_weights(cases, N, kernel, susceptible_locations):
    locs = []
    for c in cases:
        if c.location is None:
            raise DataError(f"case {c.id} has no location")
        locs.append(c.location)
    locs = np.asarray(locs, float)
    sus = np.asarray(susceptible_locations if susceptible_locations is not None else [], float)
    if sus.size == 0:
        sus = sus.reshape(0, locs.shape[1])
    if sus.ndim != 2 or sus.shape[0] != N - len(cases) or sus.shape[1] != locs.shape[1]:
        raise DataError(
            f"need {N - len(cases)} never-infected locations of dimension {locs.shape[1]}"
        )
    H = kernel.matrix(locs)
    never = kernel.matrix(sus, locs).sum(axis=0) if len(sus) else np.zeros(len(cases))
    return H, never


def _kernel_rate(M, dur, H, never, n, N, what):
    denom = K.ordered_sum(M * H) + K.ordered_sum(dur * never)
    if n > 1 and not denom > 0:
        raise EstimationError(f"{what}: kernel-weighted exposure is zero")
    return _ratio((n - 1) * N, denom, what)


def mle_beta_kernel(
    cases: Sequence[CaseRecord],
    N: int,
    kernel: KernelSpec,
    susceptible_locations: np.ndarray | None,
    delta: float = 0.0,
) -> float:
    """Baseline infection-rate MLE when pairwise rates are ``beta * h(x_k, x_j) / N``.

    Infected locations come from the cases; ``susceptible_locations`` holds
    the ``N - n`` never-infected individuals.
    """
    _, inf, rem = _complete_arrays(cases)
    _check_population(cases, N)
    H, never = _kernel_weights(cases, N, kernel, susceptible_locations)
    ones = np.ones(len(cases))
    M = expected_tau_matrix(inf, rem, ones, 1, delta)
    return _kernel_rate(M, _durations(inf, rem, ones, 1), H, never, len(cases), N, "beta_kernel")


def impute_beta_tilde_kernel(
    cases: Sequence[CaseRecord],
    N: int,
    kernel: KernelSpec,
    susceptible_locations: np.ndarray | None,
    gamma: float | Mapping,
    m: int = 1,
    delta: float = 0.0,
    fallback: str = "raise",
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed=None,
) -> float:
    """Kernel-scaled baseline infection rate with imputed exposures."""
    _require_nonempty(cases)
    _check_population(cases, N)
    H, never = _kernel_weights(cases, N, kernel, susceptible_locations)
    _, inf, rem = cases_to_arrays(cases)
    gammas = removal_rates_for(cases, gamma)
    M = expected_tau_matrix(inf, rem, gammas, m, delta, fallback, mc_samples, seed)
    return _kernel_rate(M, _durations(inf, rem, gammas, m), H, never, len(cases), N, "beta_kernel")


# ------------------------------------------------------------------ dispatch


def _r0(beta, gamma):
    if isinstance(beta, dict):
        if isinstance(gamma, dict):
            return None
        return {g: b / gamma for g, b in beta.items()}
    if isinstance(gamma, dict):
        return None
    return beta / gamma


def estimate_rates(
    cases: Sequence[CaseRecord],
    N: int,
    method: str = "tilde",
    m: int = 1,
    delta: float = 0.0,
    gamma: float | Mapping | None = None,
    group_sizes: Mapping | None = None,
    removal_groups: bool = False,
    kernel: KernelSpec | None = None,
    susceptible_locations: np.ndarray | None = None,
    fallback: str = "raise",
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed=None,
) -> EstimateResult:
    """Estimate the infection rate, its paired removal rate and ``R0``.

    ``method`` is ``"mle"``, ``"tilde"`` or ``"bar"``. Passing
    ``group_sizes`` gives group-specific rates, passing ``kernel`` a
    kernel-scaled baseline rate. ``gamma`` defaults to the calibrated MLE,
    per removal group when ``removal_groups`` is set.
    """
    if method not in ("mle", "tilde", "bar"):
        raise ValueError(f"unknown method {method!r}")
    if group_sizes is not None and kernel is not None:
        raise ValueError("group-specific and kernel estimation are exclusive")
    n_c = len(complete_subset(cases))
    flags = []
    if gamma is None:
        gamma = mle_gamma_group(cases, m) if removal_groups else mle_gamma(cases, m)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NoSecondaryInfectionWarning)
        if group_sizes is not None:
            tag = "beta_group"
            if method == "mle":
                value = mle_beta_group(cases, N, group_sizes, delta)
            elif method == "tilde":
                value = impute_beta_tilde_group(
                    cases, N, group_sizes, gamma, m, delta, fallback, mc_samples, seed
                )
            else:
                value = mle_beta_group(fill_endpoints(cases, gamma, m), N, group_sizes, delta)
        elif kernel is not None:
            tag = "beta_kernel"
            if method == "mle":
                value = mle_beta_kernel(cases, N, kernel, susceptible_locations, delta)
            elif method == "tilde":
                value = impute_beta_tilde_kernel(
                    cases, N, kernel, susceptible_locations, gamma, m, delta, fallback, mc_samples, seed
                )
            else:
                value = mle_beta_kernel(
                    fill_endpoints(cases, gamma, m), N, kernel, susceptible_locations, delta
                )
        else:
            tag = {"mle": "beta_mle", "tilde": "beta_tilde", "bar": "beta_bar"}[method]
            if method == "mle":
                value = mle_beta(cases, N, delta)
            elif method == "tilde":
                value = impute_beta_tilde(cases, N, gamma, m, delta, fallback, mc_samples, seed)
            else:
                value = impute_beta_bar(cases, N, gamma, m, delta)
    for w in caught:
        if issubclass(w.category, NoSecondaryInfectionWarning):
            flags.append("no_secondary_infections")
        else:
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    return EstimateResult(
        estimator=tag,
        value=value,
        gamma=gamma,
        R0=_r0(value, gamma),
        calibration_count=n_c,
        n=len(cases),
        N=N,
        seed=seed,
        flags=tuple(dict.fromkeys(flags)),
        metadata={"method": method, "erlang_shape": m, "incubation": delta},
    )
