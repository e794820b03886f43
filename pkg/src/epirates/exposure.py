"""Conditional expectations of pairwise exposure under partial observation.

For an ordered pair (k, j) the exposure is the time ``k`` was infectious
while ``j`` was still susceptible. When some of ``i_k, r_k, i_j, r_j`` are
missing, the expectation is taken over the missing endpoints given the
observed ones, with infectious periods ~ Erlang(m, gamma).
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .core import CaseRecord, DataError, ObservationPattern

DEFAULT_MC_SAMPLES = 100_000

_HARD_TERM_NAMES = tuple(f"s{l}" for l in range(1, 20))


class NoClosedFormError(ValueError):
    """No closed-form expectation exists for this pattern and Erlang shape.

    Use :func:`mc_tau_oracle`, or pass ``fallback="mc"`` to the matrix helpers.
    """

    def __init__(self, pattern: ObservationPattern, erlang_shape: int):
        self.pattern = pattern
        self.erlang_shape = erlang_shape
        super().__init__(
            f"no closed form for pattern {pattern.name} with Erlang shape {erlang_shape}; "
            "use mc_tau_oracle"
        )


def _nan(x):
    return math.nan if x is None else float(x)


@dataclass(frozen=True)
class PairObservation:
    """Observed endpoints of an ordered pair (infector ``k``, susceptible ``j``).

    Missing endpoints are ``None``. ``incubation`` shifts the susceptible's
    times back to its exposure time.
    """

    ik: float | None
    rk: float | None
    ij: float | None
    rj: float | None
    gamma_k: float
    gamma_j: float
    erlang_shape: int = 1
    incubation: float = 0.0

    def __post_init__(self):
        if (self.ik is None and self.rk is None) or (self.ij is None and self.rj is None):
            raise DataError("each case needs at least one observed endpoint")
        for a, b in ((self.ik, self.rk), (self.ij, self.rj)):
            if a is not None and b is not None and not b > a:
                raise DataError("removal must follow infection within a case")
        if not (self.gamma_k > 0 and self.gamma_j > 0):
            raise ValueError("removal rates must be positive")
        if int(self.erlang_shape) != self.erlang_shape or self.erlang_shape < 1:
            raise ValueError("Erlang shape must be a positive integer")
        if not self.incubation >= 0:
            raise ValueError("incubation must be non-negative")

    @classmethod
    def from_cases(
        cls,
        k: CaseRecord,
        j: CaseRecord,
        gamma_k: float,
        gamma_j: float | None = None,
        erlang_shape: int = 1,
        incubation: float = 0.0,
    ) -> "PairObservation":
        return cls(
            k.infection_time,
            k.removal_time,
            j.infection_time,
            j.removal_time,
            float(gamma_k),
            float(gamma_k if gamma_j is None else gamma_j),
            int(erlang_shape),
            float(incubation),
        )

    @property
    def pattern(self) -> ObservationPattern:
        return ObservationPattern.from_flags(
            self.ik is not None, self.rk is not None, self.ij is not None, self.rj is not None
        )

    def _args(self):
        return (
            _nan(self.ik),
            _nan(self.rk),
            _nan(self.ij),
            _nan(self.rj),
            float(self.gamma_k),
            float(self.gamma_j),
            int(self.erlang_shape),
            float(self.incubation),
        )


def expected_tau(p: PairObservation) -> float:
    """Expected exposure of ``j`` to ``k`` given the observed endpoints.

    Raises
    ------
    NoClosedFormError
        For Erlang shapes above 1 outside the removal-only and
        (r_k, i_j) patterns.
    """
    value = K.expected_tau_scalar(*p._args())
    if math.isnan(value):
        raise NoClosedFormError(p.pattern, p.erlang_shape)
    return value


def expected_duration(case: CaseRecord, gamma: float, erlang_shape: int = 1) -> float:
    """Observed infectious period, or its mean ``m / gamma`` when an endpoint is missing."""
    if case.infection_time is None and case.removal_time is None:
        raise DataError(f"case {case.id} has no observed endpoint")
    if case.is_complete:
        return case.removal_time - case.infection_time
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return erlang_shape / gamma


def mc_tau_oracle(p: PairObservation, samples: int = 10**6, seed=None) -> tuple[float, float]:
    """Monte Carlo mean and standard error of the exposure.

    Missing infection times are drawn backwards from the removal time and
    missing removal times forwards from the infection time.
    """
    if samples < 1000:
        raise ValueError("at least 1000 samples are required")
    rng = np.random.default_rng(seed)
    mean, se = K.mc_tau(rng, *p._args(), int(samples))
    return float(mean), float(se)


def hard_lemma_terms(ik: float, rj: float, gamma_k: float, gamma_j: float) -> dict:
    """Intermediate integrals for the pattern where only ``i_k`` and ``r_j`` are observed.

    Returns a dict with keys ``s1`` to ``s19`` and ``value``, the assembled
    expectation ``gk*gj*exp(-gj*rj)*exp(gk*ik)*(s2 - s1 + s11 - s12 + s13 - s14)``.
    Only meaningful for ``rj > ik``. Terms that only exist for unequal rates
    (``s8``, ``s17``) are NaN on the equal-rate branch.
    """
    out = K.hard_terms(float(ik), float(rj), float(gamma_k), float(gamma_j))
    terms = dict(zip(_HARD_TERM_NAMES, out[:19]))
    terms["value"] = out[19]
    return terms


def erlang_partial_term(p: PairObservation) -> float:
    """The additive piece with a closed form for any Erlang shape.

    For pattern (i_k, i_j) this is ``S(d) * d``, the contribution of ``k``
    still being infectious at ``i_j``. For (r_k, r_j, i_k) with ``r_j > r_k``
    it is ``F(r_j - r_k) * (r_k - i_k)``, the contribution of ``j`` being
    infected after ``r_k``. Neither is the full expectation when ``m > 1``.
    """
    value = K.erlang_partial_scalar(*p._args())
    if math.isnan(value):
        raise NoClosedFormError(p.pattern, p.erlang_shape)
    return value


def removal_rates_for(cases, gamma) -> np.ndarray:
    """Per-case removal rates from a scalar or a mapping keyed by removal group."""
    if isinstance(gamma, Mapping):
        try:
            return np.array([float(gamma[c.removal_group]) for c in cases])
        except KeyError as exc:
            raise DataError(f"no removal rate for group {exc.args[0]!r}") from None
    return np.full(len(cases), float(gamma))


def expected_tau_matrix(
    inf: np.ndarray,
    rem: np.ndarray,
    gammas: np.ndarray,
    erlang_shape: int = 1,
    incubation: float = 0.0,
    fallback: str = "raise",
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed=None,
) -> np.ndarray:
    """Matrix ``M[k, j]`` of expected exposures between all ordered case pairs.

    ``inf`` and ``rem`` hold NaN for missing times. With ``fallback="mc"``
    pairs without a closed form are filled by Monte Carlo.
    """
    inf = np.asarray(inf, float)
    rem = np.asarray(rem, float)
    gammas = np.asarray(gammas, float)
    M = K.expected_tau_matrix(inf, rem, gammas, int(erlang_shape), float(incubation))
    bad = np.isnan(M)
    if bad.any():
        if fallback == "mc":
            K.fill_missing_mc(
                M, np.random.default_rng(seed), inf, rem, gammas, int(erlang_shape),
                float(incubation), int(mc_samples),
            )
        elif fallback == "raise":
            k, j = map(int, np.argwhere(bad)[0])
            pattern = ObservationPattern(
                K.pattern_code(inf[k], rem[k], inf[j] - incubation, rem[j] - incubation)
            )
            raise NoClosedFormError(pattern, int(erlang_shape))
        else:
            raise ValueError(f"unknown fallback {fallback!r}")
    return M
