"""Data-augmented Metropolis-within-Gibbs sampling and chain diagnostics.

Missing endpoints are latent. The pairwise rate ``beta_N = beta / N`` and the
removal rate ``gamma`` have conjugate Gamma updates given the augmented
times; each augmented endpoint is proposed from the infectious-period law
and accepted with ``beta_N`` integrated out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .core import CaseRecord, DataError, cases_to_arrays
from .simulate import make_rng

REPAIR_TRIES = 1000


class InitializationError(ValueError):
    """No augmented state with a feasible infector for every case was found."""


@dataclass(frozen=True)
class PriorSpec:
    """Gamma(shape, rate) priors on ``beta_N`` and ``gamma``."""

    xi_beta: float = 1.0
    zeta_beta: float = 1.0
    xi_gamma: float = 1.0
    zeta_gamma: float = 1.0

    def __post_init__(self):
        for name in ("xi_beta", "zeta_beta", "xi_gamma", "zeta_gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive")


def gibbs_gamma(A: float, n: int, prior: PriorSpec, m: int = 1) -> tuple[float, float]:
    """Shape and rate of the conditional posterior of ``gamma``."""
    if A < 0:
        raise ValueError("total infectious time must be non-negative")
    return prior.xi_gamma + m * n, prior.zeta_gamma + A


def gibbs_beta(B: float, n: int, prior: PriorSpec) -> tuple[float, float]:
    """Shape and rate of the conditional posterior of ``beta_N``."""
    if B < 0:
        raise ValueError("total exposure must be non-negative")
    return prior.xi_beta + max(n - 1, 0), prior.zeta_beta + B


@dataclass
class AugmentedState:
    """Augmented infection/removal times with their running totals."""

    infection: np.ndarray
    removal: np.ndarray
    N: int
    incubation: float = 0.0

    def __post_init__(self):
        self.infection = np.array(self.infection, float)
        self.removal = np.array(self.removal, float)
        if np.any(~np.isfinite(self.infection)) or np.any(~np.isfinite(self.removal)):
            raise DataError("augmented times must all be finite")
        if np.any(self.removal <= self.infection):
            raise DataError("augmented removal times must follow infection times")
        self.refresh()

    def refresh(self):
        d = self.incubation
        self.counts = K.infector_counts(self.infection, self.removal, d)
        self.log_C = K.log_c_from_counts(self.infection, self.counts)
        self.pair_exposure = K.pair_exposure_sum(self.infection, self.removal, d)
        self.A = K.ordered_sum(self.removal - self.infection)

    @property
    def n(self) -> int:
        return len(self.infection)

    @property
    def B(self) -> float:
        return self.pair_exposure + (self.N - self.n) * self.A

    def log_hastings(self, j: int, new_infection: float, new_removal: float, prior: PriorSpec) -> float:
        return K.log_hastings(
            self.infection, self.removal, self.counts, self.log_C, self.pair_exposure, self.A,
            int(j), float(new_infection), float(new_removal), int(self.N), float(self.incubation),
            float(prior.xi_beta), float(prior.zeta_beta),
        )[0]


def hastings_infection(state: AugmentedState, j: int, proposed: float, prior: PriorSpec) -> float:
    """Acceptance probability for moving case ``j``'s augmented infection time."""
    log_h = state.log_hastings(j, proposed, state.removal[j], prior)
    return 1.0 if log_h >= 0 else math.exp(log_h)


def hastings_removal(state: AugmentedState, j: int, proposed: float, prior: PriorSpec) -> float:
    """Acceptance probability for moving case ``j``'s augmented removal time."""
    log_h = state.log_hastings(j, state.infection[j], proposed, prior)
    return 1.0 if log_h >= 0 else math.exp(log_h)


def log_marginal_target(infection, removal, N, prior: PriorSpec, gamma: float, m: int = 1, delta: float = 0.0) -> float:
    """Log density of augmented times given ``gamma`` with ``beta_N`` integrated out, up to a constant."""
    state = AugmentedState(infection, removal, N, delta)
    d = state.removal - state.infection
    log_f = m * math.log(gamma) - gamma * d + (m - 1) * np.log(d) - math.lgamma(m)
    shape = prior.xi_beta + state.n - 1
    return float(
        np.sum(log_f) + state.log_C + math.lgamma(shape) - shape * math.log(prior.zeta_beta + state.B)
    )


@dataclass(frozen=True)
class Chain:
    """Posterior draws from one chain.

    ``beta = N * beta_N`` and ``R0 = beta / gamma`` are derived per draw.
    ``trace`` holds the augmented values per iteration when requested, with
    columns matching ``missing_ids``.
    """

    beta_N: np.ndarray
    gamma: np.ndarray
    N: int
    infection: np.ndarray = field(repr=False)
    removal: np.ndarray = field(repr=False)
    ids: np.ndarray = field(repr=False)
    missing_ids: np.ndarray = field(repr=False)
    accepted_infection: int = 0
    proposed_infection: int = 0
    accepted_removal: int = 0
    proposed_removal: int = 0
    T1: int = 0
    T2: int = 0
    seed: int | None = None
    trace: np.ndarray | None = field(default=None, repr=False)

    @property
    def beta(self) -> np.ndarray:
        return self.beta_N * self.N

    @property
    def R0(self) -> np.ndarray:
        return self.beta / self.gamma


def _initial_state(inf, rem, miss_inf, miss_rem, m, prior, rng, delta):
    g0 = prior.xi_gamma / prior.zeta_gamma
    fi = np.where(miss_inf, rem - m / g0, inf)
    fr = np.where(miss_rem, inf + m / g0, rem)
    if K.log_c_from_counts(fi, K.infector_counts(fi, fr, delta)) > -np.inf:
        return fi, fr
    for _ in range(REPAIR_TRIES):
        draws = rng.gamma(m, 1.0 / g0, size=len(inf))
        fi = np.where(miss_inf, rem - draws, inf)
        fr = np.where(miss_rem, inf + draws, rem)
        if K.log_c_from_counts(fi, K.infector_counts(fi, fr, delta)) > -np.inf:
            return fi, fr
    raise InitializationError("could not find augmented times with a feasible infector for every case")


def run_damcmc(
    cases: Sequence[CaseRecord],
    N: int,
    prior: PriorSpec | None = None,
    m: int = 1,
    delta: float = 0.0,
    T1: int = 1000,
    T2: int | None = None,
    seed=None,
    init: tuple[np.ndarray, np.ndarray] | None = None,
    fixed_gamma: float | None = None,
    trace: bool = False,
) -> Chain:
    """Run one chain of the data-augmented sampler.

    Parameters
    ----------
    cases : sequence of CaseRecord
        Each case has at least one observed endpoint.
    N : int
        Population size.
    prior : PriorSpec, optional
    m : int
        Erlang shape.
    delta : float
        Fixed incubation period.
    T1 : int
        Iterations (draws returned).
    T2 : int, optional
        Endpoint proposals per iteration; defaults to the number of missing endpoints.
    seed : int, optional
    init : (infection, removal) arrays, optional
        Starting augmented times; observed entries must match the data.
        Defaults to filling missing endpoints with the prior-mean duration.
    fixed_gamma : float, optional
        Hold ``gamma`` fixed instead of drawing it.
    trace : bool
        Keep the augmented endpoints of every iteration.
    """
    prior = prior or PriorSpec()
    if len(cases) == 0:
        raise DataError("no cases")
    if N < len(cases):
        raise DataError("population size smaller than epidemic size")
    if T1 < 1:
        raise ValueError("T1 must be positive")
    ids, inf, rem = cases_to_arrays(cases)
    miss_inf = np.isnan(inf)
    miss_rem = np.isnan(rem)
    if np.any(miss_inf & miss_rem):
        raise DataError("each case needs at least one observed endpoint")
    miss_idx = np.flatnonzero(miss_inf | miss_rem).astype(np.int64)
    miss_flag = miss_inf[miss_idx]
    T2 = len(miss_idx) if T2 is None else int(T2)
    if T2 < 1 and len(miss_idx):
        raise ValueError("T2 must be positive")
    rng = make_rng(seed)

    if init is None:
        fi, fr = _initial_state(inf, rem, miss_inf, miss_rem, m, prior, rng, delta)
    else:
        fi = np.array(init[0], float)
        fr = np.array(init[1], float)
        if fi.shape != inf.shape or fr.shape != rem.shape:
            raise DataError("initial times have the wrong shape")
        if np.any(fr <= fi):
            raise DataError("initial removal times must follow infection times")
        if np.any(fi[~miss_inf] != inf[~miss_inf]) or np.any(fr[~miss_rem] != rem[~miss_rem]):
            raise DataError("initial times disagree with observed endpoints")
        if K.log_c_from_counts(fi, K.infector_counts(fi, fr, delta)) == -np.inf:
            fi, fr = _initial_state(inf, rem, miss_inf, miss_rem, m, prior, rng, delta)

    fg = -1.0 if fixed_gamma is None else float(fixed_gamma)
    beta_n, gammas, stats, tr, _, _, _ = K.damcmc_chain(
        rng, fi, fr, miss_idx, miss_flag, int(N), int(m), float(delta),
        prior.xi_beta, prior.zeta_beta, prior.xi_gamma, prior.zeta_gamma,
        int(T1), max(T2, 1), fg, bool(trace),
    )
    return Chain(
        beta_N=beta_n,
        gamma=gammas,
        N=int(N),
        infection=fi,
        removal=fr,
        ids=ids,
        missing_ids=ids[miss_idx],
        proposed_infection=int(stats[0]),
        accepted_infection=int(stats[1]),
        proposed_removal=int(stats[2]),
        accepted_removal=int(stats[3]),
        T1=int(T1),
        T2=int(T2),
        seed=seed if isinstance(seed, (int, type(None))) else None,
        trace=tr if trace else None,
    )


def run_chains(cases, N, n_chains: int = 4, seed=None, **kwargs) -> list[Chain]:
    """Independent chains on per-chain streams of the master ``seed``."""
    chains = []
    for c in range(n_chains):
        chain = run_damcmc(cases, N, seed=make_rng(seed, c), **kwargs)
        chains.append(chain)
    return chains


# ---------------------------------------------------------------- diagnostics


def _as_chains(x) -> np.ndarray:
    x = np.asarray(x, float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("expected a (chains, draws) array")
    return x


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row, via FFT."""
    n = x.shape[1]
    centered = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n]
    return acov / n


def ess(x) -> float:
    """Effective sample size with Geyer's initial monotone sequence.

    Accepts one chain or a ``(chains, draws)`` array. A constant input
    returns the total number of draws. Negatively correlated chains can give
    values above the number of draws, capped at ``L * log10(L)``.
    """
    x = _as_chains(x)
    n_chain, n_draw = x.shape
    if n_draw < 4:
        raise ValueError("need at least 4 draws")
    total = n_chain * n_draw
    if np.all(x == x.flat[0]):
        return float(total)
    acov = _autocov(x)
    mean_var = np.mean(acov[:, 0]) * n_draw / (n_draw - 1.0)
    var_plus = mean_var * (n_draw - 1.0) / n_draw
    if n_chain > 1:
        var_plus += np.var(x.mean(axis=1), ddof=1)
    rho = np.zeros(n_draw)
    rho_even = 1.0
    rho[0] = rho_even
    rho_odd = 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n_draw - 3 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
        rho_odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    # enforce a monotone sequence of pair sums
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    tau = -1.0 + 2.0 * np.sum(rho[: max_t + 1]) + np.sum(rho[max_t + 1 : max_t + 2])
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def split_rhat(chains) -> float:
    """Split-chain potential scale reduction; NaN when every chain is constant."""
    x = _as_chains(chains)
    if x.shape[0] < 2:
        raise ValueError("need at least 2 chains")
    if x.shape[1] < 4:
        raise ValueError("need at least 4 draws per chain")
    half = x.shape[1] // 2
    parts = np.concatenate([x[:, :half], x[:, -half:]], axis=0)
    n = parts.shape[1]
    w = np.mean(np.var(parts, axis=1, ddof=1))
    if w == 0:
        return math.nan
    b = n * np.var(parts.mean(axis=1), ddof=1)
    var_hat = (n - 1) / n * w + b / n
    return float(np.sqrt(var_hat / w))
