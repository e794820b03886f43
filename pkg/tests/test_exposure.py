import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from epirates import _kernels as K
from epirates.core import CaseRecord, DataError, ObservationPattern
from epirates.estimate import removal_only_pair_sum
from epirates.exposure import (
    NoClosedFormError,
    PairObservation,
    erlang_partial_term,
    expected_duration,
    expected_tau,
    expected_tau_matrix,
    hard_lemma_terms,
    mc_tau_oracle,
)


def obs(ik=None, rk=None, ij=None, rj=None, gk=1.0, gj=1.0, m=1, delta=0.0):
    return PairObservation(ik, rk, ij, rj, gk, gj, m, delta)


def _min_mean(m, g, d):
    """E[min(X, d)] for X ~ Erlang(m, g)."""
    if d <= 0:
        return 0.0
    return m / g * stats.gamma(m + 1, scale=1 / g).cdf(d) + d * stats.gamma(m, scale=1 / g).sf(d)


def _excess_mean(m, g, c):
    """E[(X - c)^+] for X ~ Erlang(m, g)."""
    if c <= 0:
        return m / g - c
    return m / g * stats.gamma(m + 1, scale=1 / g).sf(c) - c * stats.gamma(m, scale=1 / g).sf(c)


def quad_oracle(p: PairObservation) -> float:
    """Expected exposure by numerical integration over the latent durations.

    A latent infector duration is integrated out with the truncated-mean
    identities above; a latent susceptible duration by quadrature.
    """
    m = p.erlang_shape
    gk, gj = p.gamma_k, p.gamma_j
    ij_obs = None if p.ij is None else p.ij - p.incubation
    rj_obs = None if p.rj is None else p.rj - p.incubation

    def given_ij(ij):
        if p.ik is not None and p.rk is not None:
            return min(p.rk, ij) - min(ij, p.ik)
        if p.rk is None:
            # removal ik + X
            return _min_mean(m, gk, ij - p.ik)
        # infection rk - X
        if ij >= p.rk:
            return m / gk
        return _excess_mean(m, gk, p.rk - ij)

    if ij_obs is not None:
        return given_ij(ij_obs)
    fj = stats.gamma(m, scale=1 / gj).pdf
    kinks = [x for x in (rj_obs - (p.ik if p.ik is not None else -np.inf), rj_obs - (p.rk if p.rk is not None else -np.inf)) if 0 < x < np.inf]
    hi = stats.gamma(m, scale=1 / gj).ppf(1 - 1e-15)
    return integrate.quad(lambda x: given_ij(rj_obs - x) * fj(x), 0, hi, points=kinks or None, limit=400, epsabs=1e-12, epsrel=1e-11)[0]


# ---------------------------------------------------------------- examples


def test_ik_ij_susceptible_first_is_zero():
    assert expected_tau(obs(ik=1.0, ij=0.5)) == 0.0


def test_rk_ij_after_removal_is_mean_duration():
    assert expected_tau(obs(rk=1.0, ij=2.0)) == 1.0


def test_ik_ij_unit_gap():
    assert expected_tau(obs(ik=0.0, ij=1.0)) == pytest.approx(1 - math.exp(-1), abs=1e-12)
    assert expected_tau(obs(ik=0.0, ij=1.0)) == pytest.approx(0.632121, abs=1e-6)


def test_rk_rj_unit_gap():
    assert expected_tau(obs(rk=1.0, rj=0.0)) == pytest.approx(math.exp(-1) / 2, rel=1e-12)


def test_rj_before_ik_is_zero():
    assert expected_tau(obs(ik=2.0, rj=1.0)) == 0.0


def test_complete_is_exact():
    assert expected_tau(obs(0.0, 2.0, 1.0, 3.0)) == 1.0


def test_expected_duration_examples():
    assert expected_duration(CaseRecord(1, infection_time=0.0, removal_time=1.7), 9.0) == pytest.approx(1.7)
    assert expected_duration(CaseRecord(1, removal_time=3.0), 2.0) == 0.5
    assert expected_duration(CaseRecord(1, infection_time=3.0), 0.5, 3) == 6.0


def test_pair_observation_validation():
    with pytest.raises(DataError):
        obs(rk=1.0)
    with pytest.raises(DataError):
        obs(ik=1.0, rk=0.5, ij=1.0)
    with pytest.raises(ValueError):
        obs(ik=0.0, ij=1.0, gk=0.0)


def test_pattern_property():
    assert obs(ik=0.0, rj=1.0).pattern is ObservationPattern.RJ_IK


# ---------------------------------------------------------------- quadrature oracle

gaps = (0.1, 0.5, 1.0, 2.0, 5.0)
rates = (0.5, 1.0, 2.0)

EXPONENTIAL_CASES = [
    *(obs(ik=0.0, ij=d, gk=g) for d in gaps for g in rates),
    *(obs(rk=d, ij=0.0, gk=g) for d in gaps for g in rates),
    *(obs(rk=0.0, ij=d, gk=g) for d in (0.3,) for g in rates),
    *(obs(rk=d, rj=0.0, gk=a, gj=b) for d in (0.5, 2.0) for a, b in itertools.product(rates, rates)),
    *(obs(rk=0.0, rj=d, gk=a, gj=b) for d in (0.5, 2.0) for a, b in itertools.product(rates, rates)),
    *(obs(ik=0.0, rk=1.0, rj=r, gj=g) for r in (0.5, 1.0, 2.5) for g in rates),
    *(obs(ik=0.0, rj=d, gk=a, gj=b) for d in (0.5, 2.0) for a, b in itertools.product(rates, rates)),
]


@pytest.mark.parametrize("p", EXPONENTIAL_CASES, ids=lambda p: f"{p.pattern.name}")
def test_closed_form_matches_quadrature(p):
    assert expected_tau(p) == pytest.approx(quad_oracle(p), rel=1e-6, abs=1e-9)


ERLANG_CASES = [
    *(obs(rk=d, ij=0.0, gk=g, m=m) for d in (0.5, 2.0) for g in (0.5, 2.0) for m in (2, 3)),
    *(obs(rk=d, rj=0.0, gk=a, gj=b, m=m) for d in (0.5, 2.0) for a, b in ((1.0, 1.0), (0.5, 2.0)) for m in (2, 3)),
    *(obs(rk=0.0, rj=d, gk=a, gj=b, m=m) for d in (0.5, 2.0) for a, b in ((1.0, 1.0), (2.0, 0.5)) for m in (2, 3)),
]


@pytest.mark.parametrize("p", ERLANG_CASES, ids=lambda p: f"{p.pattern.name}-m{p.erlang_shape}")
def test_erlang_closed_form_matches_quadrature(p):
    assert expected_tau(p) == pytest.approx(quad_oracle(p), rel=1e-6, abs=1e-9)


@pytest.mark.parametrize(
    "p",
    [obs(ik=0.0, ij=1.0, m=2), obs(ik=0.0, rk=1.0, rj=2.0, m=2), obs(ik=0.0, rj=1.0, m=2), obs(ik=0.0, rk=1.0, rj=0.5, m=3)],
)
def test_erlang_without_closed_form_raises(p):
    with pytest.raises(NoClosedFormError):
        expected_tau(p)


def test_erlang_partial_terms():
    d, g, m = 1.5, 1.2, 3
    sf = stats.gamma(m, scale=1 / g).sf(d)
    assert erlang_partial_term(obs(ik=0.0, ij=d, gk=g, m=m)) == pytest.approx(sf * d, rel=1e-12)
    cdf = stats.gamma(m, scale=1 / g).cdf(0.7)
    assert erlang_partial_term(obs(ik=0.0, rk=1.0, rj=1.7, gj=g, m=m)) == pytest.approx(cdf * 1.0, rel=1e-12)
    with pytest.raises(NoClosedFormError):
        erlang_partial_term(obs(rk=1.0, rj=0.0))


@pytest.mark.parametrize("d", gaps)
@pytest.mark.parametrize("g", rates)
def test_erlang_forms_reduce_to_exponential(d, g):
    for rk, ij in ((d, 0.0), (0.0, d)):
        assert K.e_rk_ij_erlang(rk, ij, g, 1) == pytest.approx(K.e_rk_ij(rk, ij, g, 1), rel=1e-12)
    assert K.e_rk_ij_erlang(d, 0.0, g, 1) == pytest.approx(math.exp(-g * d) / g, rel=1e-12)
    for gj in rates:
        for rk, rj in ((d, 0.0), (0.0, d)):
            assert K.e_rk_rj_erlang(rk, rj, g, gj, 1) == pytest.approx(K.e_rk_rj(rk, rj, g, gj, 1), rel=1e-12)


# ---------------------------------------------------------------- Monte Carlo oracle


def test_mc_oracle_complete_is_exact():
    mean, se = mc_tau_oracle(obs(0.0, 2.0, 1.0, 3.0), samples=1000, seed=1)
    assert (mean, se) == (1.0, 0.0)


def test_mc_oracle_is_seeded():
    p = obs(ik=0.0, rj=1.0)
    assert mc_tau_oracle(p, 10_000, seed=3) == mc_tau_oracle(p, 10_000, seed=3)


def test_mc_oracle_requires_samples():
    with pytest.raises(ValueError):
        mc_tau_oracle(obs(ik=0.0, rj=1.0), samples=10)


@pytest.mark.parametrize(
    "p",
    [
        obs(ik=0.0, rj=1.0),
        obs(ik=0.0, rj=1.0, gk=0.5, gj=2.0),
        obs(rk=1.0, rj=0.0, m=2),
        obs(rk=0.5, ij=0.0, gk=2.0, m=3),
        obs(ik=0.0, rk=1.0, rj=1.5, gj=0.5),
    ],
    ids=lambda p: f"{p.pattern.name}-m{p.erlang_shape}",
)
def test_closed_form_within_four_se_of_mc(p):
    mean, se = mc_tau_oracle(p, 200_000, seed=7)
    assert abs(expected_tau(p) - mean) <= 4 * se


# ---------------------------------------------------------------- hard pattern terms


def _ex(g, lo, hi):
    return integrate.quad(lambda x: math.exp(g * x), lo, hi)[0]


def _xex(g, lo, hi):
    return integrate.quad(lambda x: x * math.exp(g * x), lo, hi)[0]


@pytest.mark.parametrize("ik, rj, gk, gj", [(0.0, 1.0, 1.0, 2.0), (0.3, 1.8, 2.0, 0.5), (0.0, 2.0, 1.5, 1.5), (0.2, 0.9, 1.0, 1.0)])
def test_hard_terms_against_quadrature(ik, rj, gk, gj):
    t = hard_lemma_terms(ik, rj, gk, gj)
    a = gj - gk
    ej = _ex(gj, ik, rj)
    assert t["s3"] == pytest.approx(_ex(a, ik, rj), rel=1e-9)
    assert t["s6"] == pytest.approx(t["s3"], rel=1e-12)
    assert t["s18"] == pytest.approx(t["s3"], rel=1e-12)
    assert t["s15"] == pytest.approx(_xex(a, ik, rj), rel=1e-9)
    assert t["s7"] == pytest.approx(gk * _xex(a, ik, rj), rel=1e-9)
    if math.isclose(gj, gk):
        assert math.isnan(t["s8"]) and math.isnan(t["s17"])
    else:
        assert t["s8"] == pytest.approx(t["s7"], rel=1e-12)
        assert t["s17"] == pytest.approx(t["s15"], rel=1e-12)
    assert t["s4"] == pytest.approx((1 + gk * ik) * math.exp(-gk * ik) * ej, rel=1e-9)
    assert t["s5"] == pytest.approx(t["s6"] + t["s7"], rel=1e-12)
    assert t["s2"] == pytest.approx((t["s4"] - t["s5"]) / gk**2, rel=1e-9, abs=1e-12)
    assert t["s1"] == pytest.approx(ik / gk * (math.exp(-gk * ik) * ej - t["s3"]), abs=1e-12)
    assert t["s19"] == pytest.approx(math.exp(-gk * rj) * ej, rel=1e-9)
    assert t["s16"] == pytest.approx(math.exp(-gk * rj) * _xex(gj, ik, rj), rel=1e-9)
    assert t["s11"] == pytest.approx(t["s16"] / gk, rel=1e-9)
    assert t["s12"] == pytest.approx(ik * t["s19"] / gk, abs=1e-12)
    assert t["s13"] == pytest.approx((t["s15"] - t["s16"]) / gk, rel=1e-9, abs=1e-12)
    assert t["s14"] == pytest.approx(ik * (t["s18"] - t["s19"]) / gk, abs=1e-12)
    pref = gj * gk * math.exp(-gj * rj + gk * ik)
    assert t["s9"] == pytest.approx(pref * (t["s11"] - t["s12"]), rel=1e-12, abs=1e-15)
    assert t["s10"] == pytest.approx(pref * (t["s13"] - t["s14"]), rel=1e-12, abs=1e-15)
    assert t["value"] == pytest.approx(pref * (t["s2"] - t["s1"]) + t["s9"] + t["s10"], rel=1e-12)
    assert t["value"] == pytest.approx(quad_oracle(obs(ik=ik, rj=rj, gk=gk, gj=gj)), rel=1e-6)


@pytest.mark.parametrize("gk", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("D", [0.1, 1.0, 5.0])
@pytest.mark.parametrize("eps", [1e-6, -1e-6])
def test_hard_pattern_continuous_at_equal_rates(gk, D, eps):
    equal = expected_tau(obs(ik=0.0, rj=D, gk=gk, gj=gk))
    near = expected_tau(obs(ik=0.0, rj=D, gk=gk, gj=gk * (1 + eps)))
    assert abs(near - equal) <= 1e-4 * equal


def test_hard_pattern_collapsed_form_agrees():
    for D, gk, gj in [(0.5, 1.0, 2.0), (3.0, 0.5, 0.7), (2.0, 1.3, 1.3)]:
        assert K.e_rj_ik_collapsed(D, gk, gj) == pytest.approx(hard_lemma_terms(0.0, D, gk, gj)["value"], rel=1e-10)


def test_hard_pattern_large_gap_is_stable():
    v = expected_tau(obs(ik=0.0, rj=400.0, gk=1.0, gj=2.0))
    assert math.isfinite(v) and v == pytest.approx(1.0, rel=1e-9)


# ---------------------------------------------------------------- properties

endpoint = st.one_of(st.none(), st.floats(-3, 3))
pos_rate = st.floats(0.2, 5)


@st.composite
def pair_observations(draw, m=1):
    ik, rk, ij, rj = (draw(endpoint) for _ in range(4))
    if ik is None and rk is None:
        rk = draw(st.floats(-3, 3))
    if ij is None and rj is None:
        rj = draw(st.floats(-3, 3))
    if ik is not None and rk is not None and not rk - ik >= 0.05:
        rk = ik + draw(st.floats(0.05, 3))
    if ij is not None and rj is not None and not rj - ij >= 0.05:
        rj = ij + draw(st.floats(0.05, 3))
    return obs(ik, rk, ij, rj, draw(pos_rate), draw(pos_rate), m, draw(st.sampled_from([0.0, 0.7])))


@given(pair_observations())
def test_expected_tau_bounded_by_expected_duration(p):
    v = expected_tau(p)
    k_dur = p.rk - p.ik if p.ik is not None and p.rk is not None else p.erlang_shape / p.gamma_k
    assert -1e-12 <= v <= k_dur * (1 + 1e-9) + 1e-12


@given(pair_observations(), st.floats(0.1, 3))
def test_delta_shift_consistency(p, delta):
    shifted = PairObservation(
        p.ik, p.rk,
        None if p.ij is None else p.ij + delta,
        None if p.rj is None else p.rj + delta,
        p.gamma_k, p.gamma_j, p.erlang_shape, p.incubation + delta,
    )
    assert expected_tau(shifted) == pytest.approx(expected_tau(p), rel=1e-9, abs=1e-12)


@given(pair_observations(), st.floats(0.2, 5))
def test_scale_equivariance(p, c):
    scaled = PairObservation(
        *(None if v is None else v * c for v in (p.ik, p.rk, p.ij, p.rj)),
        p.gamma_k / c, p.gamma_j / c, p.erlang_shape, p.incubation * c,
    )
    assert expected_tau(scaled) == pytest.approx(c * expected_tau(p), rel=1e-7, abs=1e-9)


# ---------------------------------------------------------------- matrices


def test_matrix_matches_scalar_calls():
    inf = np.array([0.0, np.nan, 0.5, 1.0])
    rem = np.array([1.5, 2.0, np.nan, 2.5])
    g = np.array([1.0, 1.0, 2.0, 0.5])
    M = expected_tau_matrix(inf, rem, g, incubation=0.2)
    nan = lambda v: None if np.isnan(v) else float(v)
    for k in range(4):
        for j in range(4):
            if k == j:
                assert M[k, j] == 0.0
                continue
            p = PairObservation(nan(inf[k]), nan(rem[k]), nan(inf[j]), nan(rem[j]), g[k], g[j], 1, 0.2)
            assert M[k, j] == pytest.approx(expected_tau(p), rel=1e-14, abs=1e-15)


def test_matrix_fallback():
    inf = np.array([0.0, np.nan])
    rem = np.array([np.nan, 1.0])
    g = np.ones(2)
    with pytest.raises(NoClosedFormError):
        expected_tau_matrix(inf, rem, g, erlang_shape=2)
    M = expected_tau_matrix(inf, rem, g, erlang_shape=2, fallback="mc", mc_samples=200_000, seed=1)
    mean, se = mc_tau_oracle(obs(ik=0.0, rj=1.0, m=2), 200_000, seed=2)
    assert abs(M[0, 1] - mean) < 6 * se


@pytest.mark.parametrize("count", [0, 1, 2, 7, 30])
@pytest.mark.parametrize("gamma", [0.1, 1.0, 10.0])
def test_removal_only_pair_sum_identity(count, gamma):
    rng = np.random.default_rng(count)
    rem = rng.uniform(0, 10, count)
    total = 0.0
    for k in range(count):
        for j in range(count):
            if k != j:
                total += expected_tau(obs(rk=rem[k], rj=rem[j], gk=gamma, gj=gamma))
    assert total == pytest.approx(removal_only_pair_sum(count, gamma), rel=1e-9, abs=1e-12)


def test_removal_only_pair_sum_example():
    assert removal_only_pair_sum(4, 2.0) == 3.0
