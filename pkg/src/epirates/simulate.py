"""Event-driven simulation of stochastic SIR and SEIR epidemics.

The index case (id 1) becomes infectious at time 0 in an otherwise fully
susceptible population. Infectious periods pass through ``m`` exponential
stages, and exposed individuals become infectious after a fixed incubation.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .core import CaseRecord, RateModel

EVENT_KINDS = ("exposure", "infection-onset", "removal-stage", "removal")

DEFAULT_MAX_TRIES = 10_000


class SimulationError(RuntimeError):
    """The pairwise rate provider failed or returned invalid rates."""


class ConditioningError(RuntimeError):
    """No simulated epidemic reached the target size within the allowed attempts."""

    def __init__(self, attempts: int, lo: int, hi: int):
        self.attempts = attempts
        self.bounds = (lo, hi)
        super().__init__(f"no epidemic of size in [{lo}, {hi}] after {attempts} attempts")


def make_rng(seed, *keys) -> np.random.Generator:
    """Generator for the stream ``keys`` under a master ``seed``.

    Distinct keys give independent streams, so replicate ``b`` of a study
    can be reproduced without running replicates ``0..b-1``.
    """
    if isinstance(seed, np.random.Generator):
        if keys:
            raise ValueError("stream keys need an integer seed")
        return seed
    if seed is not None and not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys)))


@dataclass(frozen=True)
class EventLog:
    """Ordered events of one simulated epidemic and the resulting cases.

    ``times``, ``kinds`` and ``ids`` are parallel arrays; ``kinds`` index
    into :data:`EVENT_KINDS`. ``cases`` lists infected individuals ordered by
    infection time, each fully observed.
    """

    times: np.ndarray
    kinds: np.ndarray
    ids: np.ndarray
    cases: list[CaseRecord]
    population_size: int
    attempts: int = 1
    infection_times: np.ndarray = field(default=None, repr=False)
    removal_times: np.ndarray = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.cases)

    @property
    def events(self) -> list[tuple[float, str, int]]:
        return [(float(t), EVENT_KINDS[k], int(i)) for t, k, i in zip(self.times, self.kinds, self.ids)]


def _build_log(res, N, delta, attempts=1, infection_groups=None, removal_groups=None, locations=None):
    e, inf, rem, nev, ev_t, ev_k, ev_c = res
    order = np.argsort(inf, kind="stable")
    cases = []
    for pos in order:
        if not np.isfinite(inf[pos]):
            break
        cases.append(
            CaseRecord(
                id=int(pos) + 1,
                exposure_time=float(e[pos]),
                infection_time=float(inf[pos]),
                removal_time=float(rem[pos]),
                infection_group=None if infection_groups is None else infection_groups[pos],
                removal_group=None if removal_groups is None else removal_groups[pos],
                location=None if locations is None else tuple(locations[pos]),
            )
        )
    fin_inf = np.array([c.infection_time for c in cases])
    fin_rem = np.array([c.removal_time for c in cases])
    return EventLog(
        times=ev_t[:nev].copy(),
        kinds=ev_k[:nev].copy(),
        ids=ev_c[:nev] + 1,
        cases=cases,
        population_size=N,
        attempts=attempts,
        infection_times=fin_inf,
        removal_times=fin_rem,
    )


def _check_common(gamma, N, m, delta):
    if not (isinstance(N, (int, np.integer)) and N >= 2):
        raise ValueError("population size must be an integer >= 2")
    if not (math.isfinite(gamma) and gamma > 0):
        raise ValueError("gamma must be finite and positive")
    if int(m) != m or m < 1:
        raise ValueError("Erlang shape must be a positive integer")
    if not (math.isfinite(delta) and delta >= 0):
        raise ValueError("incubation must be finite and non-negative")


def simulate_sir(
    beta: float,
    gamma: float,
    N: int,
    seed=None,
    erlang_shape: int = 1,
    incubation: float = 0.0,
) -> EventLog:
    """Simulate a homogeneous epidemic with pairwise infection rate ``beta / N``.

    Examples
    --------
    >>> log = simulate_sir(0.0, 1.0, 10, seed=1)
    >>> log.n
    1
    """
    if not (math.isfinite(beta) and beta >= 0):
        raise ValueError("beta must be finite and non-negative")
    _check_common(gamma, N, erlang_shape, incubation)
    rng = make_rng(seed)
    res = K.simulate_homogeneous(rng, float(beta), float(gamma), int(N), int(erlang_shape), float(incubation), True)
    return _build_log(res, int(N), incubation)


def pair_rate_matrix(
    model: RateModel,
    infection_groups: Sequence | None = None,
    locations: np.ndarray | None = None,
) -> np.ndarray:
    """``N x N`` matrix of pairwise infection rates ``beta_kj`` implied by ``model``.

    Group rates depend on the susceptible's infection group; kernel rates are
    ``beta * h(x_k, x_j) / N``.
    """
    N = model.population_size
    if model.is_grouped:
        if infection_groups is None or len(infection_groups) != N:
            raise ValueError("group-specific rates need an infection group for every individual")
        try:
            col = np.array([model.infection_rate(g) for g in infection_groups], float)
        except KeyError as exc:
            raise ValueError(f"no infection rate for group {exc.args[0]!r}") from None
        rates = np.repeat(col[None, :] / N, N, axis=0)
    elif model.kernel is not None:
        if locations is None or len(locations) != N:
            raise ValueError("kernel rates need a location for every individual")
        rates = model.infection_rate() * model.kernel.matrix(locations) / N
    else:
        rates = np.full((N, N), model.infection_rate() / N)
    np.fill_diagonal(rates, 0.0)
    return rates


def _resolve_rates(model: RateModel, pair_rates, infection_groups, locations) -> np.ndarray:
    N = model.population_size
    if pair_rates is None:
        return pair_rate_matrix(model, infection_groups, locations)
    if callable(pair_rates):
        rates = np.empty((N, N))
        try:
            for k in range(N):
                for j in range(N):
                    rates[k, j] = 0.0 if k == j else float(pair_rates(k + 1, j + 1))
        except Exception as exc:  # provider code is user supplied
            raise SimulationError(f"pair rate provider failed: {exc}") from exc
    else:
        rates = np.array(pair_rates, float)
        if rates.shape != (N, N):
            raise SimulationError(f"pair rate matrix must be {N} x {N}")
        np.fill_diagonal(rates, 0.0)
    if not np.all(np.isfinite(rates)) or np.any(rates < 0):
        raise SimulationError("pairwise rates must be finite and non-negative")
    return rates


def _removal_rate_vector(model: RateModel, removal_groups) -> np.ndarray:
    N = model.population_size
    if isinstance(model.gamma, Mapping):
        if removal_groups is None or len(removal_groups) != N:
            raise ValueError("group-specific removal rates need a removal group for every individual")
        return np.array([model.removal_rate(g) for g in removal_groups], float)
    return np.full(N, model.removal_rate())


def simulate_seir_het(
    model: RateModel,
    pair_rates: np.ndarray | Callable[[int, int], float] | None = None,
    seed=None,
    infection_groups: Sequence | None = None,
    removal_groups: Sequence | None = None,
    locations: np.ndarray | None = None,
) -> EventLog:
    """Simulate a heterogeneous SEIR epidemic.

    Parameters
    ----------
    model : RateModel
        Supplies ``N``, removal rates, Erlang shape and incubation. When
        ``pair_rates`` is omitted, it also supplies the infection rates.
    pair_rates : ndarray or callable, optional
        ``N x N`` matrix, or ``f(k, j)`` taking 1-based ids, giving the rate at
        which ``k`` infects ``j``.
    seed : int, optional
    infection_groups, removal_groups : sequence, optional
        Group label of each individual, in id order.
    locations : ndarray, optional
        ``N x d`` location features, in id order.
    """
    rates = _resolve_rates(model, pair_rates, infection_groups, locations)
    gam = _removal_rate_vector(model, removal_groups)
    rng = make_rng(seed)
    res = K.simulate_matrix(rng, rates, gam, int(model.erlang_shape), float(model.incubation), True)
    return _build_log(
        res, model.population_size, model.incubation, 1, infection_groups, removal_groups, locations
    )


def size_bounds(target_n: int, omega: float) -> tuple[int, int]:
    """Integer sizes ``n`` with ``(1 - omega) target <= n <= (1 + omega) target``."""
    eps = 1e-9
    return math.ceil((1 - omega) * target_n - eps), math.floor((1 + omega) * target_n + eps)


def conditional_simulate(
    model: RateModel,
    pair_rates=None,
    target_n: int = 1,
    omega: float = 0.1,
    max_tries: int = DEFAULT_MAX_TRIES,
    seed=None,
    infection_groups: Sequence | None = None,
    removal_groups: Sequence | None = None,
    locations: np.ndarray | None = None,
) -> EventLog:
    """Resimulate until the epidemic size is within ``omega`` of ``target_n``.

    Raises
    ------
    ConditioningError
        After ``max_tries`` unsuccessful attempts.
    """
    if not 0 < omega < 1:
        raise ValueError("omega must lie in (0, 1)")
    if not 1 <= target_n <= model.population_size:
        raise ValueError("target size must lie in [1, N]")
    if max_tries < 1:
        raise ValueError("max_tries must be positive")
    lo, hi = size_bounds(target_n, omega)
    rates = _resolve_rates(model, pair_rates, infection_groups, locations)
    gam = _removal_rate_vector(model, removal_groups)
    rng = make_rng(seed)
    m, delta = int(model.erlang_shape), float(model.incubation)
    for attempt in range(1, max_tries + 1):
        state = rng.bit_generator.state
        res = K.simulate_matrix(rng, rates, gam, m, delta, False)
        n = int(np.sum(np.isfinite(res[1])))
        if lo <= n <= hi:
            # replay the accepted run with event recording on
            rng.bit_generator.state = state
            res = K.simulate_matrix(rng, rates, gam, m, delta, True)
            return _build_log(
                res, model.population_size, delta, attempt, infection_groups, removal_groups, locations
            )
    raise ConditioningError(max_tries, lo, hi)
