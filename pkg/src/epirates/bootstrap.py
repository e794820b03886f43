"""Studentized double parametric bootstrap for the imputed infection rate.

Each outer replicate simulates an epidemic of roughly the observed size from
the fitted rates, masks endpoints, and re-estimates. An inner bootstrap from
the replicate's own estimates gives its standard error, and the studentized
pivots set the interval endpoints.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .core import CaseRecord, DataError
from .estimate import impute_beta_tilde, mle_gamma
from .simulate import DEFAULT_MAX_TRIES, make_rng, size_bounds

MAX_FAILED_FRACTION = 0.5

# stream keys under the master seed
_OUTER_STREAM = 0
_SE_STREAM = 1


class BootstrapError(RuntimeError):
    """Too many replicates failed to produce an epidemic of the required size."""

    def __init__(self, message: str, diagnostics: dict):
        self.diagnostics = diagnostics
        super().__init__(message)


@dataclass(frozen=True)
class BootstrapConfig:
    """Settings of the double bootstrap.

    ``missingness`` is ``"binomial"`` (each replicate draws how many periods
    are partial, then how many of those lack the infection time) or
    ``"mirror"`` (each replicate masks the same fractions as the data).
    ``mc_samples`` serves pairs without a closed-form exposure expectation
    (Erlang shapes above 1).
    """

    B_out: int = 200
    B_in: int = 20
    se_reps: int = 100
    omega: float = 0.1
    alpha: float = 0.05
    p_missing: float = 0.2
    p_inf_missing: float = 0.8
    seed: int | None = None
    max_tries: int = DEFAULT_MAX_TRIES
    missingness: str = "binomial"
    mc_samples: int = 10_000

    def __post_init__(self):
        if self.B_out < 2 or self.B_in < 2 or self.se_reps < 2:
            raise ValueError("B_out, B_in and se_reps must be at least 2")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 < self.omega < 1:
            raise ValueError("omega must lie in (0, 1)")
        for name in ("p_missing", "p_inf_missing"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.missingness not in ("binomial", "mirror"):
            raise ValueError("missingness must be 'binomial' or 'mirror'")
        if self.max_tries < 1:
            raise ValueError("max_tries must be positive")


@dataclass(frozen=True)
class IntervalResult:
    """Bootstrap-t interval for one parameter."""

    estimate: float
    lower: float
    upper: float
    midpoint: float
    se: float
    t_lower: float
    t_upper: float
    n_used: int

    def __post_init__(self):
        if not self.lower <= self.midpoint <= self.upper:
            raise ValueError("interval endpoints out of order")


@dataclass(frozen=True)
class BootstrapResult:
    """Intervals for the infection rate and ``R0`` with per-replicate diagnostics."""

    beta: IntervalResult
    R0: IntervalResult
    gamma: float
    n: int
    config: BootstrapConfig
    replicate_sizes: np.ndarray = field(repr=False)
    replicate_attempts: np.ndarray = field(repr=False)
    dropped: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "beta": asdict(self.beta),
            "R0": asdict(self.R0),
            "gamma": self.gamma,
            "n": self.n,
            "config": asdict(self.config),
            "replicate_sizes": [int(x) for x in self.replicate_sizes],
            "replicate_attempts": [int(x) for x in self.replicate_attempts],
            "dropped": dict(self.dropped),
        }


def empirical_quantile(samples: Sequence[float], q: float) -> float:
    """Quantile with linear interpolation between the closest order statistics.

    Examples
    --------
    >>> empirical_quantile([1, 2, 3, 4], 0.5)
    2.5
    """
    x = np.asarray(samples, float)
    if x.size == 0:
        raise ValueError("empty sample")
    if not 0 <= q <= 1:
        raise ValueError("q must lie in [0, 1]")
    return float(np.quantile(x, q, method="linear"))


def t_interval(estimate: float, se: float, t_samples: Sequence[float], alpha: float) -> IntervalResult:
    """Bootstrap-t interval ``[est - t_hi * se, est - t_lo * se]`` and its midpoint."""
    t_lo = empirical_quantile(t_samples, alpha / 2)
    t_hi = empirical_quantile(t_samples, 1 - alpha / 2)
    lower = estimate - t_hi * se
    upper = estimate - t_lo * se
    return IntervalResult(
        estimate=float(estimate),
        lower=float(lower),
        upper=float(upper),
        midpoint=float(0.5 * (lower + upper)),
        se=float(se),
        t_lower=t_lo,
        t_upper=t_hi,
        n_used=len(t_samples),
    )


def _masking(cfg: BootstrapConfig, cases):
    if cfg.missingness == "binomial":
        return cfg.p_missing, cfg.p_inf_missing, False
    n = len(cases)
    inf_missing = sum(c.infection_time is None for c in cases)
    rem_missing = sum(c.removal_time is None for c in cases)
    return inf_missing / n, rem_missing / n, True


def bootstrap_t(
    cases: Sequence[CaseRecord],
    N: int,
    beta: float | None = None,
    gamma: float | None = None,
    m: int = 1,
    delta: float = 0.0,
    config: BootstrapConfig | None = None,
) -> BootstrapResult:
    """Bootstrap-t intervals for the infection rate and ``R0``.

    Parameters
    ----------
    cases : sequence of CaseRecord
        Observed, partially observed data; its size sets the conditioning target.
    N : int
        Population size.
    beta, gamma : float, optional
        Point estimates to bootstrap from. Default to the imputed infection
        rate and the calibrated removal rate of ``cases``.
    m : int
        Erlang shape.
    delta : float
        Fixed incubation period.
    config : BootstrapConfig, optional
    """
    cfg = config or BootstrapConfig()
    n = len(cases)
    if n < 2:
        raise DataError("bootstrap needs at least two cases")
    if gamma is None:
        gamma = mle_gamma(cases, m)
    if beta is None:
        beta = impute_beta_tilde(cases, N, gamma, m, delta, fallback="mc", mc_samples=cfg.mc_samples, seed=cfg.seed)
    if not (beta > 0 and gamma > 0):
        raise ValueError("bootstrap needs positive rate estimates")
    lo, hi = size_bounds(n, cfg.omega)
    p1, p2, mirror = _masking(cfg, cases)
    args = (int(N), int(m), float(delta), lo, hi, int(cfg.max_tries), p1, p2, mirror, int(cfg.mc_samples))
    r0 = beta / gamma

    t_beta, t_r0 = [], []
    sizes = np.zeros(cfg.B_out, np.int64)
    attempts = np.zeros(cfg.B_out, np.int64)
    dropped = {"conditioning": 0, "no_calibration": 0, "inner_failed": 0, "zero_se": 0}
    for b in range(cfg.B_out):
        rng = make_rng(cfg.seed, _OUTER_STREAM, b)
        b_star, g_star, n_star, att = K.replicate_estimate(rng, beta, gamma, *args)
        sizes[b], attempts[b] = n_star, att
        if att < 0:
            dropped["conditioning"] += 1
            continue
        if math.isnan(b_star) or not b_star > 0:
            dropped["no_calibration"] += 1
            continue
        betas, gammas, _, inner_att = K.replicate_batch(rng, b_star, g_star, *args, cfg.B_in)
        ok = (inner_att > 0) & np.isfinite(betas)
        if ok.sum() < 2:
            dropped["inner_failed"] += 1
            continue
        se_b = float(np.std(betas[ok], ddof=1))
        se_r = float(np.std(betas[ok] / gammas[ok], ddof=1))
        if not (se_b > 0 and se_r > 0):
            dropped["zero_se"] += 1
            continue
        t_beta.append((b_star - beta) / se_b)
        t_r0.append((b_star / g_star - r0) / se_r)

    diagnostics = {"dropped": dropped, "B_out": cfg.B_out}
    if dropped["conditioning"] > MAX_FAILED_FRACTION * cfg.B_out:
        raise BootstrapError(
            f"{dropped['conditioning']} of {cfg.B_out} replicates failed to reach "
            f"an epidemic size in [{lo}, {hi}]",
            diagnostics,
        )
    if len(t_beta) < 2:
        raise BootstrapError("fewer than two usable bootstrap replicates", diagnostics)

    rng = make_rng(cfg.seed, _SE_STREAM)
    betas, gammas, _, se_att = K.replicate_batch(rng, beta, gamma, *args, cfg.se_reps)
    ok = (se_att > 0) & np.isfinite(betas)
    if ok.sum() < 2:
        raise BootstrapError("standard-error replicates failed", diagnostics)
    se_beta = float(np.std(betas[ok], ddof=1))
    se_r0 = float(np.std(betas[ok] / gammas[ok], ddof=1))

    return BootstrapResult(
        beta=t_interval(beta, se_beta, t_beta, cfg.alpha),
        R0=t_interval(r0, se_r0, t_r0, cfg.alpha),
        gamma=float(gamma),
        n=n,
        config=cfg,
        replicate_sizes=sizes,
        replicate_attempts=attempts,
        dropped=dropped,
    )
