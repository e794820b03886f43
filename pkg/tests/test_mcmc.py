import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from epirates.core import CaseRecord, DataError, index_case, pairwise_tau, sufficient_stats
from epirates.dataio import inject_missingness
from epirates.mcmc import (
    AugmentedState,
    PriorSpec,
    ess,
    gibbs_beta,
    gibbs_gamma,
    hastings_infection,
    hastings_removal,
    log_marginal_target,
    run_chains,
    run_damcmc,
    split_rhat,
)
from epirates.simulate import conditional_simulate
from epirates.core import RateModel


def case(id, i, r):
    return CaseRecord(id, infection_time=i, removal_time=r)


# ---------------------------------------------------------------- conjugate updates


def test_gibbs_gamma_example():
    assert gibbs_gamma(3.0, 3, PriorSpec()) == (4.0, 4.0)


def test_gibbs_gamma_flat_prior_mean_is_mle():
    shape, rate = gibbs_gamma(7.0, 5, PriorSpec(xi_gamma=1e-9, zeta_gamma=1e-9), m=2)
    assert shape / rate == pytest.approx(2 * 5 / 7.0, rel=1e-8)


def test_gibbs_gamma_without_data_is_prior():
    assert gibbs_gamma(0.0, 0, PriorSpec(xi_gamma=2.0, zeta_gamma=3.0)) == (2.0, 3.0)


def test_gibbs_beta_examples():
    assert gibbs_beta(3.5, 2, PriorSpec()) == (2.0, 4.5)
    assert gibbs_beta(3.5, 1, PriorSpec(xi_beta=1.5))[0] == 1.5


def test_gibbs_beta_flat_prior_mean():
    cases = [case(1, 0.0, 2.0), case(2, 1.0, 1.5), case(3, 1.2, 3.0)]
    N = 10
    s = sufficient_stats(cases, N)
    shape, rate = gibbs_beta(s.B, s.n, PriorSpec(1e-9, 1e-9))
    assert shape / rate * N == pytest.approx((s.n - 1) * N / s.B, rel=1e-8)


def test_prior_validation():
    with pytest.raises(ValueError):
        PriorSpec(xi_beta=0.0)


# ---------------------------------------------------------------- acceptance ratios


def brute_log_ratio(inf, rem, j, new_i, new_r, N, prior, delta=0.0):
    """Direct ratio of C and the integrated-out beta term, by enumeration."""

    def pieces(i, r):
        cases = [case(k + 1, a, b) for k, (a, b) in enumerate(zip(i, r))]
        idx = index_case(cases)
        C = 1
        for pos, cj in enumerate(cases):
            if pos != idx:
                e = cj.infection_time - delta
                C *= sum(1 for ck in cases if ck is not cj and ck.infection_time < e < ck.removal_time)
        n = len(cases)
        B = sum(pairwise_tau(k, x, delta) for k in cases for x in cases if k is not x)
        B += (N - n) * sum(c.removal_time - c.infection_time for c in cases)
        return C, B

    C0, B0 = pieces(inf, rem)
    i1, r1 = list(inf), list(rem)
    i1[j], r1[j] = new_i, new_r
    C1, B1 = pieces(i1, r1)
    if C1 == 0:
        return -math.inf
    shape = prior.xi_beta + len(inf) - 1
    return math.log(C1 / C0 * ((prior.zeta_beta + B0) / (prior.zeta_beta + B1)) ** shape)


@pytest.fixture
def state3():
    return AugmentedState([0.0, 0.6, 1.1], [2.0, 1.8, 2.5], N=8)


def test_hastings_identity_proposal(state3):
    assert hastings_infection(state3, 1, 0.6, PriorSpec()) == 1.0
    assert hastings_removal(state3, 2, 2.5, PriorSpec()) == 1.0


def test_hastings_infeasible_infection(state3):
    # case 2 moved after every other infectious period ends
    st3 = AugmentedState([0.0, 0.6, 1.1], [1.0, 1.8, 5.0], N=8)
    assert hastings_infection(st3, 1, 0.6, PriorSpec()) == 1.0
    assert hastings_infection(AugmentedState([0.0, 0.6], [1.0, 3.0], 5), 1, 1.5, PriorSpec()) == 0.0


def test_hastings_removal_infeasible():
    # shrinking the index case's removal below case 2's infection leaves case 2 without an infector
    st2 = AugmentedState([0.0, 0.6], [1.0, 3.0], N=5)
    assert hastings_removal(st2, 0, 0.5, PriorSpec()) == 0.0


@pytest.mark.parametrize("j, new_i, new_r", [(1, 0.3, 1.8), (2, 0.4, 2.5), (0, 0.0, 1.2), (2, 1.1, 4.0), (1, 0.05, 1.8)])
def test_hastings_matches_direct_ratio(state3, j, new_i, new_r):
    prior = PriorSpec(1.3, 0.7)
    log_h = state3.log_hastings(j, new_i, new_r, prior)
    assert log_h == pytest.approx(brute_log_ratio(state3.infection, state3.removal, j, new_i, new_r, 8, prior), rel=1e-9, abs=1e-12)


@given(
    st.lists(st.floats(0, 3), min_size=3, max_size=6, unique=True),
    st.lists(st.floats(0.2, 3), min_size=6, max_size=6),
    st.integers(0, 5),
    st.floats(0.1, 3),
    st.booleans(),
    st.sampled_from([0.0, 0.3]),
)
def test_log_hastings_matches_direct_ratio(inf, durs, j, d, move_inf, delta):
    inf = sorted(inf)
    n = len(inf)
    rem = [i + durs[k] for k, i in enumerate(inf)]
    state = AugmentedState(inf, rem, N=n + 3, incubation=delta)
    if state.log_C == -math.inf:
        return
    j = j % n
    new_i, new_r = (rem[j] - d, rem[j]) if move_inf else (inf[j], inf[j] + d)
    prior = PriorSpec()
    expected = brute_log_ratio(inf, rem, j, new_i, new_r, n + 3, prior, delta)
    got = state.log_hastings(j, new_i, new_r, prior)
    if expected == -math.inf:
        assert got == -math.inf
    else:
        assert got == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_log_hastings_equals_marginal_target_difference(state3):
    prior, gamma = PriorSpec(), 1.3
    inf, rem = state3.infection.copy(), state3.removal.copy()
    new = inf.copy()
    new[1] = 0.3
    d_target = log_marginal_target(new, rem, 8, prior, gamma) - log_marginal_target(inf, rem, 8, prior, gamma)
    # the proposal density is the infectious-period law, so its factor cancels
    d_f = -gamma * ((rem[1] - new[1]) - (rem[1] - inf[1]))
    assert state3.log_hastings(1, 0.3, rem[1], prior) == pytest.approx(d_target - d_f, rel=1e-12)


def test_augmented_state_validation():
    with pytest.raises(DataError):
        AugmentedState([0.0, 1.0], [1.0, 0.5], N=3)


# ---------------------------------------------------------------- chains


def test_complete_data_is_pure_gibbs():
    cases = [case(1, 0.0, 2.0), case(2, 1.0, 1.5), case(3, 1.2, 3.0), case(4, 1.4, 2.2)]
    N, prior = 10, PriorSpec(2.0, 1.0, 2.0, 1.0)
    chain = run_damcmc(cases, N, prior, T1=5000, seed=3)
    s = sufficient_stats(cases, N)
    g_shape, g_rate = gibbs_gamma(s.A, s.n, prior)
    b_shape, b_rate = gibbs_beta(s.B, s.n, prior)
    assert chain.proposed_infection == chain.proposed_removal == 0
    for draws, shape, rate in ((chain.gamma, g_shape, g_rate), (chain.beta_N, b_shape, b_rate)):
        se = math.sqrt(shape) / rate / math.sqrt(len(draws))
        assert abs(draws.mean() - shape / rate) < 3 * se


def _partial(seed=1, n_target=40, p_missing=0.3):
    log = conditional_simulate(RateModel(60, 2.0, 1.0), target_n=n_target, omega=0.3, seed=seed)
    cases, _ = inject_missingness(log.cases, p_missing, 0.5, seed=seed)
    return cases


def test_observed_endpoints_fixed_and_order_kept():
    cases = _partial()
    chain = run_damcmc(cases, 60, T1=300, seed=4, trace=True)
    ids = list(chain.ids)
    for c in cases:
        pos = ids.index(c.id)
        if c.infection_time is not None:
            assert chain.infection[pos] == c.infection_time
        if c.removal_time is not None:
            assert chain.removal[pos] == c.removal_time
    by_id = {c.id: c for c in cases}
    for q, cid in enumerate(chain.missing_ids):
        c = by_id[cid]
        col = chain.trace[:, q]
        if c.infection_time is None:
            assert np.all(col < c.removal_time)
        else:
            assert np.all(col > c.infection_time)
    assert chain.trace.shape == (300, len(chain.missing_ids))
    assert 0 < chain.accepted_infection <= chain.proposed_infection
    assert 0 < chain.accepted_removal <= chain.proposed_removal


def test_chain_is_deterministic():
    cases = _partial(2)
    a = run_damcmc(cases, 60, T1=200, seed=8)
    b = run_damcmc(cases, 60, T1=200, seed=8)
    assert np.array_equal(a.beta_N, b.beta_N) and np.array_equal(a.gamma, b.gamma)


def test_fixed_gamma():
    chain = run_damcmc(_partial(3), 60, T1=50, seed=1, fixed_gamma=0.8)
    assert np.all(chain.gamma == 0.8)
    assert np.allclose(chain.R0, chain.beta / 0.8)


def test_removal_only_data_runs():
    cases = [CaseRecord(k + 1, removal_time=float(r)) for k, r in enumerate([1.0, 1.4, 2.0, 2.2, 3.1])]
    chain = run_damcmc(cases, 10, T1=200, seed=5)
    assert np.all(np.isfinite(chain.beta)) and chain.proposed_infection > 0


def test_init_must_match_data():
    cases = [case(1, 0.0, 2.0), CaseRecord(2, removal_time=1.5)]
    with pytest.raises(DataError):
        run_damcmc(cases, 5, T1=10, init=(np.array([0.1, 1.0]), np.array([2.0, 1.5])))


def test_run_chains_uses_distinct_streams():
    chains = run_chains(_partial(4), 60, n_chains=3, seed=2, T1=100)
    assert len(chains) == 3
    assert not np.array_equal(chains[0].beta_N, chains[1].beta_N)


# ---------------------------------------------------------------- diagnostics


def test_rhat_identical_iid_chains():
    x = np.random.default_rng(0).normal(size=4000)
    assert 0.99 <= split_rhat(np.vstack([x, x])) <= 1.01


def test_rhat_detects_shifted_chains():
    rng = np.random.default_rng(1)
    assert split_rhat(np.vstack([rng.normal(size=500), rng.normal(3, 1, size=500)])) > 1.5


def test_rhat_requirements():
    with pytest.raises(ValueError):
        split_rhat(np.zeros((1, 10)))
    with pytest.raises(ValueError):
        split_rhat(np.zeros((2, 3)))
    assert math.isnan(split_rhat(np.ones((2, 10))))


@pytest.mark.parametrize("seed", range(5))
def test_ess_iid(seed):
    L = 2000
    assert ess(np.random.default_rng(seed).normal(size=L)) == pytest.approx(L, rel=0.2)


def test_ess_alternating_exceeds_length():
    L = 1000
    x = np.tile([1.0, -1.0], L // 2)
    assert ess(x) > L


def test_ess_autocorrelated_is_small():
    rng = np.random.default_rng(2)
    x = np.zeros(5000)
    for t in range(1, len(x)):
        x[t] = 0.95 * x[t - 1] + rng.normal()
    # AR(1) with phi=0.95 has ESS near L (1 - phi) / (1 + phi)
    assert ess(x) == pytest.approx(5000 * 0.05 / 1.95, rel=0.5)


def test_ess_constant_chain():
    assert ess(np.ones(100)) == 100.0
