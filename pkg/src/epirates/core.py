"""Domain types, sufficient statistics and the complete-data log-likelihood."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Hashable, Mapping, Sequence

import numpy as np

from ._kernels import tau_matrix


class IncompletePairError(ValueError):
    """A pair lacks an endpoint needed to compute its exposure exactly."""


class DataError(ValueError):
    """Case data violate the invariants of a :class:`CaseRecord` set."""


def _opt_float(value):
    if value is None:
        return None
    value = float(value)
    if math.isnan(value):
        return None
    if not math.isfinite(value):
        raise DataError(f"non-finite time {value!r}")
    return value


@dataclass(frozen=True)
class CaseRecord:
    """One infected individual.

    Missing times are ``None``. At least one of ``infection_time`` and
    ``removal_time`` must be present.
    """

    id: int
    exposure_time: float | None = None
    infection_time: float | None = None
    removal_time: float | None = None
    infection_group: Hashable | None = None
    removal_group: Hashable | None = None
    location: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "exposure_time", _opt_float(self.exposure_time))
        object.__setattr__(self, "infection_time", _opt_float(self.infection_time))
        object.__setattr__(self, "removal_time", _opt_float(self.removal_time))
        if self.location is not None:
            object.__setattr__(self, "location", tuple(float(x) for x in self.location))
        if self.infection_time is None and self.removal_time is None:
            raise DataError(f"case {self.id}: neither infection nor removal time observed")
        if (
            self.infection_time is not None
            and self.removal_time is not None
            and not self.removal_time > self.infection_time
        ):
            raise DataError(
                f"case {self.id}: removal time {self.removal_time} "
                f"not after infection time {self.infection_time}"
            )

    @property
    def is_complete(self) -> bool:
        return self.infection_time is not None and self.removal_time is not None


@dataclass(frozen=True)
class KernelSpec:
    """Distance kernel ``h`` applied to the Euclidean distance between locations."""

    kind: str = "constant"
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "exponential"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.rate < 0:
            raise ValueError("kernel decay rate must be non-negative")

    def __call__(self, x, y) -> float:
        if self.kind == "constant":
            return 1.0
        d = float(np.linalg.norm(np.asarray(x, float) - np.asarray(y, float)))
        return math.exp(-self.rate * d)

    def matrix(self, rows, cols=None) -> np.ndarray:
        """Kernel values between every row location and every column location."""
        rows = np.atleast_2d(np.asarray(rows, float))
        cols = rows if cols is None else np.atleast_2d(np.asarray(cols, float))
        if self.kind == "constant":
            return np.ones((len(rows), len(cols)))
        d = np.sqrt(((rows[:, None, :] - cols[None, :, :]) ** 2).sum(axis=-1))
        return np.exp(-self.rate * d)


@dataclass(frozen=True)
class RateModel:
    """Infection and removal rate structure for a closed population.

    ``beta`` is a float (homogeneous, or the kernel baseline when ``kernel``
    is set) or a mapping from infection group to rate. ``gamma`` is a float
    or a mapping from removal group to rate. Pairwise rates are ``beta / N``.
    """

    population_size: int
    beta: float | Mapping[Hashable, float]
    gamma: float | Mapping[Hashable, float]
    erlang_shape: int = 1
    incubation: float = 0.0
    kernel: KernelSpec | None = None

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population size must be at least 2")
        if int(self.erlang_shape) != self.erlang_shape or self.erlang_shape < 1:
            raise ValueError("Erlang shape must be a positive integer")
        if not self.incubation >= 0:
            raise ValueError("incubation period must be non-negative")
        for name in ("beta", "gamma"):
            value = getattr(self, name)
            values = value.values() if isinstance(value, Mapping) else [value]
            for v in values:
                if not (math.isfinite(v) and v > 0):
                    raise ValueError(f"{name} rates must be finite and positive, got {v!r}")
        if self.kernel is not None and self.is_grouped:
            raise ValueError("kernel-scaled and group-specific infection rates are exclusive")

    @property
    def is_grouped(self) -> bool:
        return isinstance(self.beta, Mapping)

    def removal_rate(self, group=None) -> float:
        if isinstance(self.gamma, Mapping):
            return float(self.gamma[group])
        return float(self.gamma)

    def infection_rate(self, group=None) -> float:
        if isinstance(self.beta, Mapping):
            return float(self.beta[group])
        return float(self.beta)


class ObservationPattern(IntEnum):
    """Which endpoints among ``(i_k, r_k, i_j, r_j)`` an ordered pair has.

    Values are shared with the compiled kernels.
    """

    COMPLETE = 0
    RK_RJ = 1
    IK_IJ = 2
    RK_IJ = 3
    RJ_IK = 4
    RK_RJ_IK = 5
    RK_RJ_IJ = 6
    RJ_IK_IJ = 7

    @classmethod
    def from_flags(cls, ik: bool, rk: bool, ij: bool, rj: bool) -> "ObservationPattern":
        if not (ik or rk) or not (ij or rj):
            raise DataError("each case needs at least one observed endpoint")
        if ij:
            if ik and rk:
                return cls.COMPLETE
            if ik:
                return cls.RJ_IK_IJ if rj else cls.IK_IJ
            return cls.RK_RJ_IJ if rj else cls.RK_IJ
        if ik and rk:
            return cls.RK_RJ_IK
        if ik:
            return cls.RJ_IK
        return cls.RK_RJ

    @classmethod
    def from_cases(cls, k: CaseRecord, j: CaseRecord) -> "ObservationPattern":
        return cls.from_flags(
            k.infection_time is not None,
            k.removal_time is not None,
            j.infection_time is not None,
            j.removal_time is not None,
        )

    @property
    def equivalent(self) -> "ObservationPattern":
        """Pattern with the same conditional expectation (``r_j`` adds nothing once ``i_j`` is known)."""
        if self is ObservationPattern.RK_RJ_IJ:
            return ObservationPattern.RK_IJ
        if self is ObservationPattern.RJ_IK_IJ:
            return ObservationPattern.IK_IJ
        return self


@dataclass(frozen=True)
class SufficientStats:
    """Totals driving the complete-data likelihood.

    ``log_C`` is the log of the product over non-index cases of their number
    of possible infectors, ``-inf`` when some case has none.
    """

    A: float
    B: float
    log_C: float
    n: int
    tau: np.ndarray = field(repr=False)

    @property
    def C(self) -> float:
        return math.exp(self.log_C)


def cases_to_arrays(cases: Sequence[CaseRecord]):
    """Return ``(ids, infection, removal)`` arrays with NaN for missing times."""
    ids = np.array([c.id for c in cases], dtype=np.int64)
    inf = np.array(
        [np.nan if c.infection_time is None else c.infection_time for c in cases], float
    )
    rem = np.array([np.nan if c.removal_time is None else c.removal_time for c in cases], float)
    return ids, inf, rem


def index_case(cases: Sequence[CaseRecord]) -> int:
    """Position of the index case.

    Earliest observed infection time; when no infection time is observed,
    earliest removal time. Ties go to the smallest id.
    """
    if not cases:
        raise DataError("no cases")
    with_inf = [(c.infection_time, c.id, pos) for pos, c in enumerate(cases) if c.infection_time is not None]
    if with_inf:
        return min(with_inf)[2]
    return min((c.removal_time, c.id, pos) for pos, c in enumerate(cases))[2]


def index_position(ids: np.ndarray, inf: np.ndarray, rem: np.ndarray) -> int:
    """Array form of :func:`index_case`."""
    key = inf if np.any(~np.isnan(inf)) else rem
    best = None
    for pos in range(len(ids)):
        if np.isnan(key[pos]):
            continue
        cand = (key[pos], ids[pos], pos)
        if best is None or cand < best:
            best = cand
    return best[2]


def _require_complete(cases: Sequence[CaseRecord]):
    for c in cases:
        if not c.is_complete:
            raise IncompletePairError(f"case {c.id} is not fully observed")


def pairwise_tau(k: CaseRecord, j: CaseRecord, delta: float = 0.0) -> float:
    """Time ``k`` was infectious while ``j`` was still susceptible.

    ``min(r_k, e_j) - min(e_j, i_k)`` with ``e_j = i_j - delta``.
    """
    if k.infection_time is None or k.removal_time is None:
        raise IncompletePairError(f"infector {k.id} lacks an endpoint")
    if j.infection_time is None:
        if j.exposure_time is None:
            raise IncompletePairError(f"susceptible {j.id} lacks an infection time")
        e_j = j.exposure_time
    else:
        e_j = j.infection_time - delta
    return min(k.removal_time, e_j) - min(e_j, k.infection_time)


def _removal_rates(cases, model: RateModel) -> np.ndarray:
    return np.array([model.removal_rate(c.removal_group) for c in cases], float)


def _infector_counts(inf, rem, delta):
    exp_t = inf - delta
    ind = (inf[:, None] < exp_t[None, :]) & (exp_t[None, :] < rem[:, None])
    np.fill_diagonal(ind, False)
    return ind.sum(axis=0)


def sufficient_stats(cases: Sequence[CaseRecord], population_size: int, delta: float = 0.0) -> SufficientStats:
    """A, B and C for fully observed cases under homogeneous mixing."""
    _require_complete(cases)
    n = len(cases)
    if population_size < n:
        raise DataError(f"population size {population_size} smaller than epidemic size {n}")
    ids, inf, rem = cases_to_arrays(cases)
    tau = tau_matrix(inf, rem, delta)
    A = float(np.sum(rem - inf))
    B = float(np.sum(tau)) + (population_size - n) * A
    counts = _infector_counts(inf, rem, delta)
    idx = index_position(ids, inf, rem)
    counts = np.delete(counts, idx)
    log_C = float(np.sum(np.log(counts))) if np.all(counts > 0) else -math.inf
    return SufficientStats(A=A, B=B, log_C=log_C, n=n, tau=tau)


def complete_loglik(
    cases: Sequence[CaseRecord],
    model: RateModel,
    pair_rates: np.ndarray | None = None,
) -> float:
    """Complete-data log-likelihood of fully observed cases.

    Parameters
    ----------
    cases : sequence of CaseRecord
        Every infected individual, all endpoints observed.
    model : RateModel
        Rates; removal rates may be group-specific via ``removal_group``.
    pair_rates : ndarray, optional
        ``N x N`` matrix of pairwise rates indexed by ``id - 1``; ids must lie
        in ``1..N``. Defaults to ``beta / N`` for every pair, which requires a
        homogeneous ``beta``.

    Returns
    -------
    float
        ``-inf`` when some non-index case had no possible infector.
    """
    _require_complete(cases)
    for c in cases:
        if not (math.isfinite(c.infection_time) and math.isfinite(c.removal_time)):
            raise DataError(f"case {c.id} has non-finite times")
    N = model.population_size
    n = len(cases)
    if n > N:
        raise DataError("more cases than individuals")
    m = int(model.erlang_shape)
    delta = float(model.incubation)
    ids, inf, rem = cases_to_arrays(cases)
    gam = _removal_rates(cases, model)
    dur = rem - inf

    if pair_rates is None:
        if model.is_grouped or model.kernel is not None:
            raise ValueError("non-homogeneous infection rates need an explicit pair_rates matrix")
        rate_inf = np.full((n, n), model.infection_rate() / N)
        never_total = np.full(n, (N - n) * model.infection_rate() / N)
    else:
        pair_rates = np.asarray(pair_rates, float)
        if pair_rates.shape != (N, N):
            raise ValueError("pair_rates must be N x N")
        pos = ids - 1
        rate_inf = pair_rates[np.ix_(pos, pos)]
        others = np.setdiff1d(np.arange(N), pos)
        never_total = pair_rates[np.ix_(pos, others)].sum(axis=1)

    log_f = m * np.log(gam) - gam * dur + (m - 1) * np.log(dur) - math.lgamma(m)
    tau = tau_matrix(inf, rem, delta)
    exposure = float(np.sum(rate_inf * tau)) + float(np.sum(never_total * dur))

    exp_t = inf - delta
    ind = (inf[:, None] < exp_t[None, :]) & (exp_t[None, :] < rem[:, None])
    np.fill_diagonal(ind, False)
    hazard = (rate_inf * ind).sum(axis=0)
    idx = index_position(ids, inf, rem)
    hazard = np.delete(hazard, idx)
    if np.any(hazard <= 0):
        return -math.inf
    return float(np.sum(log_f) - exposure + np.sum(np.log(hazard)))
