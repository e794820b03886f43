"""Compiled numerical kernels.

Everything here works on plain float arrays with NaN marking a missing time,
so the same code serves the public API and the bootstrap inner loops.
"""

import math

import numpy as np
from numba import njit

# Pattern codes, kept in sync with core.ObservationPattern.
COMPLETE = 0
RK_RJ = 1
IK_IJ = 2
RK_IJ = 3
RJ_IK = 4
RK_RJ_IK = 5
RK_RJ_IJ = 6
RJ_IK_IJ = 7

# rate*width above which the hard pattern switches to its collapsed form (exp overflow)
HARD_TERMS_MAX_EXPONENT = 300.0
# relative rate gap below which rates are treated as equal
EQUAL_RATE_RTOL = 1e-8

EV_EXPOSURE = 0
EV_ONSET = 1
EV_STAGE = 2
EV_REMOVAL = 3


@njit(cache=True)
def pattern_code(ik, rk, ij, rj):
    hik = not math.isnan(ik)
    hrk = not math.isnan(rk)
    hij = not math.isnan(ij)
    hrj = not math.isnan(rj)
    if hij:
        if hik and hrk:
            return COMPLETE
        if hik:
            return RJ_IK_IJ if hrj else IK_IJ
        return RK_RJ_IJ if hrj else RK_IJ
    if hik and hrk:
        return RK_RJ_IK
    if hik:
        return RJ_IK
    return RK_RJ


@njit(cache=True)
def tau_exact(ik, rk, ej):
    return min(rk, ej) - min(ej, ik)


@njit(cache=True)
def tau_matrix(inf, rem, delta):
    n = inf.shape[0]
    out = np.zeros((n, n))
    for k in range(n):
        for j in range(n):
            if k != j:
                out[k, j] = tau_exact(inf[k], rem[k], inf[j] - delta)
    return out


# ---------------------------------------------------------------- helpers


@njit(cache=True)
def poisson_pmf(lam, l):
    if lam <= 0.0:
        return 1.0 if l == 0 else 0.0
    return math.exp(-lam + l * math.log(lam) - math.lgamma(l + 1.0))


@njit(cache=True)
def erlang_sf(x, rate, m):
    """P(Erlang(m, rate) > x)."""
    if x <= 0.0:
        return 1.0
    if m == 1:
        return math.exp(-rate * x)
    s = 0.0
    for l in range(m):
        s += poisson_pmf(rate * x, l)
    return min(s, 1.0)


@njit(cache=True)
def erlang_cdf(x, rate, m):
    if x <= 0.0:
        return 0.0
    if m == 1:
        return -math.expm1(-rate * x)
    return 1.0 - erlang_sf(x, rate, m)


@njit(cache=True)
def binom(a, b):
    if b < 0 or b > a:
        return 0.0
    out = 1.0
    for t in range(1, b + 1):
        out = out * (a - b + t) / t
    return out


@njit(cache=True)
def xm1e(x):
    """x - 1 + exp(-x) without cancellation near zero."""
    if abs(x) < 1e-3:
        return x * x * (0.5 - x * (1.0 / 6.0 - x / 24.0))
    return x + math.expm1(-x)


@njit(cache=True)
def rates_equal(a, b):
    return abs(a - b) < EQUAL_RATE_RTOL * max(a, b)


@njit(cache=True)
def int_exp(a, hi):
    """Integral of exp(a x) over [0, hi]."""
    if a == 0.0:
        return hi
    return math.expm1(a * hi) / a


@njit(cache=True)
def int_x_exp(a, hi):
    """Integral of x exp(a x) over [0, hi]."""
    if a == 0.0:
        return 0.5 * hi * hi
    z = a * hi
    if abs(z) < 0.05:
        # sum_n a^n hi^(n+2) / (n! (n+2))
        total = 0.0
        term = hi * hi  # a^n hi^(n+2) / n!
        for nn in range(14):
            total += term / (nn + 2.0)
            term = term * z / (nn + 1.0)
        return total
    return (math.exp(z) * (z - 1.0) + 1.0) / (a * a)


# ------------------------------------------------ exponential expectations


@njit(cache=True)
def e_ik_ij(ik, ij, gk, m):
    """Infector start and susceptible infection observed; infector removal latent."""
    d = ij - ik
    if d <= 0.0:
        return 0.0
    if m == 1:
        # S(d) d + (exp(-g d)(-g d - 1) + 1)/g, simplified
        return -math.expm1(-gk * d) / gk
    return math.nan


@njit(cache=True)
def e_rk_rj_ik(ik, rk, rj, gj, m):
    """Both removals and the infector start observed; susceptible infection latent."""
    if rj <= ik:
        return 0.0
    if rj <= rk:
        if m != 1:
            return math.nan
        return xm1e(gj * (rj - ik)) / gj
    if m != 1:
        return math.nan
    surv = math.exp(-gj * (rj - rk))
    return surv * xm1e(gj * (rk - ik)) / gj + (1.0 - surv) * (rk - ik)


@njit(cache=True)
def e_rk_ij(rk, ij, gk, m):
    """Infector removal and susceptible infection observed; infector start latent."""
    if ij >= rk:
        return m / gk
    if m == 1:
        return math.exp(-gk * (rk - ij)) / gk
    return e_rk_ij_erlang(rk, ij, gk, m)


@njit(cache=True)
def e_rk_ij_erlang(rk, ij, gk, m):
    """Erlang form of :func:`e_rk_ij`; valid for every shape including 1."""
    if ij >= rk:
        return m / gk
    lam = gk * (rk - ij)
    s = 0.0
    for l in range(m):
        s += poisson_pmf(lam, l) * (m - l)
    return s / gk


@njit(cache=True)
def e_rk_rj(rk, rj, gk, gj, m):
    """Only the two removal times observed."""
    if m == 1:
        if rj < rk:
            return math.exp(-gk * (rk - rj)) * gj / (gk * (gk + gj))
        surv = math.exp(-gj * (rj - rk))
        return surv * gj / (gk * (gk + gj)) + (1.0 - surv) / gk
    return e_rk_rj_erlang(rk, rj, gk, gj, m)


@njit(cache=True)
def e_rk_rj_erlang(rk, rj, gk, gj, m):
    """Erlang form of :func:`e_rk_rj`; valid for every shape including 1."""
    c = gk / (gk + gj)
    if rj < rk:
        lam = gk * (rk - rj)
        total = 0.0
        for l1 in range(m):
            inner = 0.0
            for l2 in range(m - l1):
                inner += binom(m + l2 - 1, l2) * c**l2 * (1.0 - c) ** m * (m - l1 - l2)
            total += poisson_pmf(lam, l1) * inner
        return total / gk
    lam = gj * (rj - rk)
    total = 0.0
    for l1 in range(m):
        inner = 0.0
        for l2 in range(m):
            inner += binom(m - l1 - 1 + l2, l2) * c**l2 * (1.0 - c) ** (m - l1) * (m - l2)
        total += poisson_pmf(lam, l1) * inner
    return total / gk + erlang_cdf(rj - rk, gj, m) * m / gk


@njit(cache=True)
def hard_terms(ik, rj, gk, gj):
    """Intermediate integrals s1..s19 for the (r_j, i_k) pattern and their assembly.

    Returns a 20-tuple ``(s1, ..., s19, value)``. Callers shift times so that
    ``ik = 0``; the general ``ik`` terms are kept so each integral can be
    checked on its own.
    """
    equal = rates_equal(gj, gk)
    a = 0.0 if equal else gj - gk
    D = rj - ik
    # integrals over [ik, rj] of exp(a x) and x exp(a x), written relative to ik
    ea_ik = math.exp(a * ik)
    int_e = ea_ik * int_exp(a, D)
    int_xe = ea_ik * (int_x_exp(a, D) + ik * int_exp(a, D))

    s3 = int_e
    s1 = ik / gk * (math.exp(-gk * ik) * (math.exp(gj * rj) - math.exp(gj * ik)) / gj - s3)
    s4 = (1.0 + gk * ik) * math.exp(-gk * ik) * (math.exp(gj * rj) - math.exp(gj * ik)) / gj
    s6 = int_e
    if equal:
        s7 = 0.5 * gk * (rj * rj - ik * ik)
        s8 = math.nan
    else:
        s8 = gk * int_xe
        s7 = s8
    s5 = s6 + s7
    s2 = (s4 - s5) / (gk * gk)
    pref = gj * gk * math.exp(-gj * rj) * math.exp(gk * ik)
    first = pref * (s2 - s1)

    # [(1 - gj x) exp(gj x)] evaluated from rj to ik
    bracket = (1.0 - gj * ik) * math.exp(gj * ik) - (1.0 - gj * rj) * math.exp(gj * rj)
    s11 = math.exp(-gk * rj) * bracket / (gk * gj * gj)
    s12 = ik * math.exp(-gk * rj) * (math.exp(gj * rj) - math.exp(gj * ik)) / (gk * gj)
    s9 = pref * (s11 - s12)
    if equal:
        s15 = 0.5 * (rj * rj - ik * ik)
        s17 = math.nan
    else:
        s17 = int_xe
        s15 = s17
    s16 = math.exp(-gk * rj) * bracket / (gj * gj)
    s13 = (s15 - s16) / gk
    s18 = int_e
    s19 = math.exp(-gk * rj) * (math.exp(gj * rj) - math.exp(gj * ik)) / gj
    s14 = ik * (s18 - s19) / gk
    s10 = pref * (s13 - s14)
    value = first + s9 + s10
    return (s1, s2, s3, s4, s5, s6, s7, s8, s9, s10, s11, s12, s13, s14, s15, s16, s17, s18, s19, value)


@njit(cache=True)
def e_rj_ik_collapsed(D, gk, gj):
    """Closed form of the (r_j, i_k) expectation after integrating out both latent times."""
    if rates_equal(gj, gk):
        return -(math.expm1(-gj * D) + gj * D * math.exp(-gj * D)) / gk
    a = gj - gk
    # (exp(-gk D) - exp(-gj D)) / (gj - gk)
    mixed = math.exp(-gk * D) * (-math.expm1(-a * D)) / a
    return (-math.expm1(-gj * D) - gj * mixed) / gk


@njit(cache=True)
def e_rj_ik(ik, rj, gk, gj, m):
    """Susceptible removal and infector start observed; both other endpoints latent."""
    D = rj - ik
    if D <= 0.0:
        return 0.0
    if m != 1:
        return math.nan
    if max(gk, gj) * D > HARD_TERMS_MAX_EXPONENT:
        return e_rj_ik_collapsed(D, gk, gj)
    return hard_terms(0.0, D, gk, gj)[19]


@njit(cache=True)
def expected_tau_scalar(ik, rk, ij, rj, gk, gj, m, delta):
    """Conditional expectation of the exposure of j to k; NaN when no closed form."""
    ij = ij - delta
    rj = rj - delta
    code = pattern_code(ik, rk, ij, rj)
    if code == COMPLETE:
        return tau_exact(ik, rk, ij)
    if code == IK_IJ or code == RJ_IK_IJ:
        return e_ik_ij(ik, ij, gk, m)
    if code == RK_IJ or code == RK_RJ_IJ:
        return e_rk_ij(rk, ij, gk, m)
    if code == RK_RJ_IK:
        return e_rk_rj_ik(ik, rk, rj, gj, m)
    if code == RJ_IK:
        return e_rj_ik(ik, rj, gk, gj, m)
    return e_rk_rj(rk, rj, gk, gj, m)


@njit(cache=True)
def erlang_partial_scalar(ik, rk, ij, rj, gk, gj, m, delta):
    """Additive term with a closed form for any shape in the partly solved patterns."""
    ij = ij - delta
    rj = rj - delta
    code = pattern_code(ik, rk, ij, rj)
    if code == IK_IJ or code == RJ_IK_IJ:
        d = ij - ik
        if d <= 0.0:
            return 0.0
        return erlang_sf(d, gk, m) * d
    if code == RK_RJ_IK:
        if rj <= rk:
            return 0.0
        return erlang_cdf(rj - rk, gj, m) * (rk - ik)
    return math.nan


@njit(cache=True)
def mc_tau(rng, ik, rk, ij, rj, gk, gj, m, delta, samples):
    """Monte Carlo mean and standard error of the exposure given observed endpoints."""
    ij = ij - delta
    rj = rj - delta
    have_ij = not math.isnan(ij)
    have_ik = not math.isnan(ik)
    have_rk = not math.isnan(rk)
    if have_ik and have_rk and have_ij:
        return tau_exact(ik, rk, ij), 0.0
    total = 0.0
    total2 = 0.0
    for _ in range(samples):
        a = ik
        b = rk
        if not have_ik:
            a = rk - rng.gamma(m, 1.0 / gk)
        elif not have_rk:
            b = ik + rng.gamma(m, 1.0 / gk)
        e = ij
        if not have_ij:
            e = rj - rng.gamma(m, 1.0 / gj)
        t = tau_exact(a, b, e)
        total += t
        total2 += t * t
    mean = total / samples
    var = max(total2 / samples - mean * mean, 0.0) * samples / (samples - 1.0)
    return mean, math.sqrt(var / samples)


@njit(cache=True)
def expected_tau_matrix(inf, rem, gam, m, delta):
    """Matrix of conditional exposure expectations, NaN where no closed form exists."""
    n = inf.shape[0]
    out = np.zeros((n, n))
    for k in range(n):
        for j in range(n):
            if k != j:
                out[k, j] = expected_tau_scalar(inf[k], rem[k], inf[j], rem[j], gam[k], gam[j], m, delta)
    return out


@njit(cache=True)
def fill_missing_mc(out, rng, inf, rem, gam, m, delta, samples):
    n = inf.shape[0]
    for k in range(n):
        for j in range(n):
            if k != j and math.isnan(out[k, j]):
                out[k, j] = mc_tau(rng, inf[k], rem[k], inf[j], rem[j], gam[k], gam[j], m, delta, samples)[0]


@njit(cache=True)
def expected_durations(inf, rem, gam, m):
    n = inf.shape[0]
    out = np.empty(n)
    for j in range(n):
        if math.isnan(inf[j]) or math.isnan(rem[j]):
            out[j] = m / gam[j]
        else:
            out[j] = rem[j] - inf[j]
    return out


@njit(cache=True)
def ordered_sum(x):
    """Left-to-right sum; the single summation rule shared by every estimator."""
    s = 0.0
    for v in x.ravel():
        s += v
    return s


@njit(cache=True)
def calibrated_gamma(inf, rem, m):
    """Removal-rate MLE from fully observed periods; NaN when there are none."""
    count = 0
    total = 0.0
    for j in range(inf.shape[0]):
        if not math.isnan(inf[j]) and not math.isnan(rem[j]):
            count += 1
            total += rem[j] - inf[j]
    if count == 0 or total <= 0.0:
        return math.nan
    return m * count / total


@njit(cache=True)
def beta_tilde_arrays(rng, inf, rem, gam, m, delta, N, mc_samples):
    """Exposure-imputed infection rate.

    Pairs without a closed form are filled by Monte Carlo when
    ``mc_samples > 0``; otherwise the result is NaN.
    """
    n = inf.shape[0]
    if n < 2:
        return 0.0
    M = expected_tau_matrix(inf, rem, gam, m, delta)
    if mc_samples > 0 and np.isnan(M).any():
        fill_missing_mc(M, rng, inf, rem, gam, m, delta, mc_samples)
    dur = expected_durations(inf, rem, gam, m)
    denom = ordered_sum(M) + (N - n) * ordered_sum(dur)
    return (n - 1) * N / denom


# ---------------------------------------------------------------- simulation


@njit(cache=True)
def simulate_homogeneous(rng, beta, gamma, N, m, delta, record):
    """Event-driven SEIR with homogeneous rates, Erlang(m) stages and fixed incubation.

    Returns per-individual exposure/infection/removal times (inf when never
    reached), the number of events and the event arrays.
    """
    e = np.full(N, np.inf)
    inf = np.full(N, np.inf)
    rem = np.full(N, np.inf)
    stage = np.zeros(N, np.int64)
    sus = np.arange(1, N)
    ns = N - 1
    infectious = np.empty(N, np.int64)
    infectious[0] = 0
    ni = 1
    queue = np.empty(N, np.int64)
    qh = 0
    qt = 0
    max_ev = N * (m + 2) + 1 if record else 1
    ev_t = np.empty(max_ev)
    ev_k = np.empty(max_ev, np.int64)
    ev_c = np.empty(max_ev, np.int64)
    nev = 0
    e[0] = -delta
    inf[0] = 0.0
    if record:
        ev_t[0] = 0.0
        ev_k[0] = EV_ONSET
        ev_c[0] = 0
        nev = 1
    t = 0.0
    rate_pair = beta / N
    while ni > 0 or qh < qt:
        lam_si = rate_pair * ns * ni
        lam_ir = gamma * ni
        total = lam_si + lam_ir
        t_ctmc = t + rng.exponential(1.0 / total) if total > 0.0 else np.inf
        t_prog = inf[queue[qh]] if qh < qt else np.inf
        if t_prog <= t_ctmc:
            t = t_prog
            j = queue[qh]
            qh += 1
            infectious[ni] = j
            ni += 1
            kind = EV_ONSET
        else:
            t = t_ctmc
            if rng.random() * total < lam_si:
                pos = rng.integers(0, ns)
                j = sus[pos]
                ns -= 1
                sus[pos] = sus[ns]
                e[j] = t
                if delta > 0.0:
                    inf[j] = t + delta
                    queue[qt] = j
                    qt += 1
                    kind = EV_EXPOSURE
                else:
                    inf[j] = t
                    infectious[ni] = j
                    ni += 1
                    kind = EV_ONSET
            else:
                pos = rng.integers(0, ni)
                j = infectious[pos]
                stage[j] += 1
                kind = EV_STAGE
                if stage[j] == m:
                    rem[j] = t
                    ni -= 1
                    infectious[pos] = infectious[ni]
                    kind = EV_REMOVAL
        if record:
            ev_t[nev] = t
            ev_k[nev] = kind
            ev_c[nev] = j
            nev += 1
    return e, inf, rem, nev, ev_t, ev_k, ev_c


@njit(cache=True)
def simulate_matrix(rng, rates, gam, m, delta, record):
    """Event-driven SEIR with pairwise rates ``rates[k, j]`` and per-individual removal rates."""
    N = rates.shape[0]
    e = np.full(N, np.inf)
    inf = np.full(N, np.inf)
    rem = np.full(N, np.inf)
    stage = np.zeros(N, np.int64)
    in_s = np.ones(N, np.bool_)
    in_s[0] = False
    sus = np.arange(1, N)
    ns = N - 1
    infectious = np.empty(N, np.int64)
    infectious[0] = 0
    ni = 1
    pressure = rates[0].copy()
    queue = np.empty(N, np.int64)
    qh = 0
    qt = 0
    max_ev = N * (m + 2) + 1 if record else 1
    ev_t = np.empty(max_ev)
    ev_k = np.empty(max_ev, np.int64)
    ev_c = np.empty(max_ev, np.int64)
    nev = 0
    e[0] = -delta
    inf[0] = 0.0
    if record:
        ev_t[0] = 0.0
        ev_k[0] = EV_ONSET
        ev_c[0] = 0
        nev = 1
    t = 0.0
    while ni > 0 or qh < qt:
        lam_si = 0.0
        if ni > 0:
            for p in range(ns):
                lam_si += max(pressure[sus[p]], 0.0)
        lam_ir = 0.0
        for p in range(ni):
            lam_ir += gam[infectious[p]]
        total = lam_si + lam_ir
        t_ctmc = t + rng.exponential(1.0 / total) if total > 0.0 else np.inf
        t_prog = inf[queue[qh]] if qh < qt else np.inf
        if t_prog <= t_ctmc:
            t = t_prog
            j = queue[qh]
            qh += 1
            infectious[ni] = j
            ni += 1
            pressure += rates[j]
            kind = EV_ONSET
        else:
            t = t_ctmc
            u = rng.random() * total
            if u < lam_si:
                pos = ns - 1
                acc = 0.0
                for p in range(ns):
                    acc += max(pressure[sus[p]], 0.0)
                    if u < acc:
                        pos = p
                        break
                j = sus[pos]
                ns -= 1
                sus[pos] = sus[ns]
                in_s[j] = False
                e[j] = t
                if delta > 0.0:
                    inf[j] = t + delta
                    queue[qt] = j
                    qt += 1
                    kind = EV_EXPOSURE
                else:
                    inf[j] = t
                    infectious[ni] = j
                    ni += 1
                    pressure += rates[j]
                    kind = EV_ONSET
            else:
                u -= lam_si
                pos = ni - 1
                acc = 0.0
                for p in range(ni):
                    acc += gam[infectious[p]]
                    if u < acc:
                        pos = p
                        break
                j = infectious[pos]
                stage[j] += 1
                kind = EV_STAGE
                if stage[j] == m:
                    rem[j] = t
                    ni -= 1
                    infectious[pos] = infectious[ni]
                    pressure -= rates[j]
                    if ni == 0:
                        pressure[:] = 0.0
                    kind = EV_REMOVAL
        if record:
            ev_t[nev] = t
            ev_k[nev] = kind
            ev_c[nev] = j
            nev += 1
    return e, inf, rem, nev, ev_t, ev_k, ev_c


@njit(cache=True)
def infected_arrays(inf, rem):
    """Infection/removal times of infected individuals, in infection order."""
    order = np.argsort(inf, kind="mergesort")
    n = 0
    for j in range(inf.shape[0]):
        if inf[j] < np.inf:
            n += 1
    return inf[order[:n]].copy(), rem[order[:n]].copy()


@njit(cache=True)
def conditional_homogeneous(rng, beta, gamma, N, m, delta, lo, hi, max_tries):
    """Resimulate until the epidemic size lies in [lo, hi]; attempts=-1 on failure."""
    for attempt in range(1, max_tries + 1):
        res = simulate_homogeneous(rng, beta, gamma, N, m, delta, False)
        inf, rem = infected_arrays(res[1], res[2])
        n = inf.shape[0]
        if lo <= n <= hi:
            return inf, rem, attempt
    return np.empty(0), np.empty(0), -1


@njit(cache=True)
def mask_arrays(rng, inf, rem, p_missing, p_inf_missing):
    """Drop exactly one endpoint from Binomial(n, p_missing) randomly chosen cases."""
    n = inf.shape[0]
    mi = inf.copy()
    mr = rem.copy()
    x1 = rng.binomial(n, p_missing) if n > 0 else 0
    x2 = rng.binomial(x1, p_inf_missing) if x1 > 0 else 0
    perm = rng.permutation(n)
    for q in range(x1):
        j = perm[q]
        if q < x2:
            mi[j] = math.nan
        else:
            mr[j] = math.nan
    return mi, mr


@njit(cache=True)
def mask_fractions(rng, inf, rem, frac_inf, frac_rem):
    """Drop infection times from round(n frac_inf) cases and removal times from round(n frac_rem) others."""
    n = inf.shape[0]
    mi = inf.copy()
    mr = rem.copy()
    x_inf = min(int(round(n * frac_inf)), n)
    x_rem = min(int(round(n * frac_rem)), n - x_inf)
    perm = rng.permutation(n)
    for q in range(x_inf + x_rem):
        j = perm[q]
        if q < x_inf:
            mi[j] = math.nan
        else:
            mr[j] = math.nan
    return mi, mr


@njit(cache=True)
def replicate_estimate(rng, beta, gamma, N, m, delta, lo, hi, max_tries, p_missing, p_inf_missing, mirror, mc_samples):
    """One bootstrap replicate: conditional simulation, masking, re-estimation.

    Returns ``(beta_tilde, gamma_hat, n, attempts)``; ``attempts == -1`` marks a
    conditioning failure and NaN estimates mark an unusable replicate. With
    ``mirror`` set, the two probabilities are read as fixed fractions of
    cases missing their infection and removal time.
    """
    inf, rem, attempts = conditional_homogeneous(rng, beta, gamma, N, m, delta, lo, hi, max_tries)
    if attempts < 0:
        return math.nan, math.nan, 0, -1
    if mirror:
        mi, mr = mask_fractions(rng, inf, rem, p_missing, p_inf_missing)
    else:
        mi, mr = mask_arrays(rng, inf, rem, p_missing, p_inf_missing)
    g = calibrated_gamma(mi, mr, m)
    if math.isnan(g):
        return math.nan, math.nan, inf.shape[0], attempts
    gam = np.full(mi.shape[0], g)
    b = beta_tilde_arrays(rng, mi, mr, gam, m, delta, N, mc_samples)
    return b, g, inf.shape[0], attempts


@njit(cache=True)
def replicate_batch(rng, beta, gamma, N, m, delta, lo, hi, max_tries, p_missing, p_inf_missing, mirror, mc_samples, count):
    betas = np.empty(count)
    gammas = np.empty(count)
    sizes = np.empty(count, np.int64)
    attempts = np.empty(count, np.int64)
    for b in range(count):
        res = replicate_estimate(rng, beta, gamma, N, m, delta, lo, hi, max_tries, p_missing, p_inf_missing, mirror, mc_samples)
        betas[b] = res[0]
        gammas[b] = res[1]
        sizes[b] = res[2]
        attempts[b] = res[3]
    return betas, gammas, sizes, attempts


# ---------------------------------------------------------------- sampler


@njit(cache=True)
def infector_counts(inf, rem, delta):
    """Number of cases infectious at each case's exposure time."""
    n = inf.shape[0]
    counts = np.zeros(n, np.int64)
    for j in range(n):
        e = inf[j] - delta
        for k in range(n):
            if k != j and inf[k] < e < rem[k]:
                counts[j] += 1
    return counts


@njit(cache=True)
def log_c_from_counts(inf, counts):
    """Sum of log infector counts over every case except the earliest infected."""
    idx = np.argmin(inf)
    s = 0.0
    for j in range(inf.shape[0]):
        if j == idx:
            continue
        if counts[j] == 0:
            return -np.inf
        s += math.log(counts[j])
    return s


@njit(cache=True)
def pair_exposure_sum(inf, rem, delta):
    return ordered_sum(tau_matrix(inf, rem, delta))


@njit(cache=True)
def propose_change(inf, rem, counts, j, new_i, new_r, delta):
    """Change in pair exposure, duration total and infector counts if case j moves."""
    n = inf.shape[0]
    old = 0.0
    new = 0.0
    nc = counts.copy()
    ej_new = new_i - delta
    cj = 0
    for l in range(n):
        if l == j:
            continue
        el = inf[l] - delta
        old += tau_exact(inf[j], rem[j], el) + tau_exact(inf[l], rem[l], inf[j] - delta)
        new += tau_exact(new_i, new_r, el) + tau_exact(inf[l], rem[l], ej_new)
        was = 1 if inf[j] < el < rem[j] else 0
        now = 1 if new_i < el < new_r else 0
        nc[l] += now - was
        if inf[l] < ej_new < rem[l]:
            cj += 1
    nc[j] = cj
    d_a = (new_r - new_i) - (rem[j] - inf[j])
    return new - old, d_a, nc


@njit(cache=True)
def log_hastings(inf, rem, counts, log_c, b_pairs, a_total, j, new_i, new_r, N, delta, xi_b, zeta_b):
    """Log acceptance ratio for moving case j to ``(new_i, new_r)`` with beta integrated out.

    Returns ``(log_h, d_b, d_a, new_counts, new_log_c)``.
    """
    n = inf.shape[0]
    d_b, d_a, nc = propose_change(inf, rem, counts, j, new_i, new_r, delta)
    old_i = inf[j]
    inf[j] = new_i
    new_log_c = log_c_from_counts(inf, nc)
    inf[j] = old_i
    if new_log_c == -np.inf:
        return -np.inf, d_b, d_a, nc, new_log_c
    b_old = b_pairs + (N - n) * a_total
    b_new = (b_pairs + d_b) + (N - n) * (a_total + d_a)
    shape = xi_b + n - 1.0
    log_h = (new_log_c - log_c) - shape * (math.log(zeta_b + b_new) - math.log(zeta_b + b_old))
    return log_h, d_b, d_a, nc, new_log_c


@njit(cache=True)
def damcmc_chain(rng, inf, rem, miss_idx, miss_inf, N, m, delta, xi_b, zeta_b, xi_g, zeta_g, T1, T2, fixed_gamma, trace):
    """Metropolis-within-Gibbs sweeps over ``(beta_N, gamma)`` and the missing endpoints.

    ``inf`` and ``rem`` are updated in place. ``miss_inf[q]`` says whether
    case ``miss_idx[q]`` lacks its infection (else its removal) time.
    """
    n = inf.shape[0]
    nm = miss_idx.shape[0]
    counts = infector_counts(inf, rem, delta)
    log_c = log_c_from_counts(inf, counts)
    b_pairs = pair_exposure_sum(inf, rem, delta)
    a_total = ordered_sum(rem - inf)
    beta_n = np.empty(T1)
    gammas = np.empty(T1)
    stats = np.zeros(4, np.int64)  # proposals/acceptances for infection, removal
    tr = np.empty((T1 if trace else 0, nm))
    for t in range(T1):
        b_total = b_pairs + (N - n) * a_total
        bn = rng.gamma(xi_b + n - 1.0, 1.0 / (zeta_b + b_total))
        if fixed_gamma > 0.0:
            g = fixed_gamma
        else:
            g = rng.gamma(xi_g + m * n, 1.0 / (zeta_g + a_total))
        if nm > 0:
            for _ in range(T2):
                q = rng.integers(0, nm)
                j = miss_idx[q]
                dur = rng.gamma(m, 1.0) / g
                if miss_inf[q]:
                    new_i = rem[j] - dur
                    new_r = rem[j]
                    stats[0] += 1
                else:
                    new_i = inf[j]
                    new_r = inf[j] + dur
                    stats[2] += 1
                log_h, d_b, d_a, nc, new_log_c = log_hastings(
                    inf, rem, counts, log_c, b_pairs, a_total, j, new_i, new_r, N, delta, xi_b, zeta_b
                )
                if log_h >= 0.0 or math.log(rng.random()) < log_h:
                    inf[j] = new_i
                    rem[j] = new_r
                    counts = nc
                    log_c = new_log_c
                    b_pairs += d_b
                    a_total += d_a
                    if miss_inf[q]:
                        stats[1] += 1
                    else:
                        stats[3] += 1
        beta_n[t] = bn
        gammas[t] = g
        if trace:
            for q in range(nm):
                j = miss_idx[q]
                tr[t, q] = inf[j] if miss_inf[q] else rem[j]
    return beta_n, gammas, stats, tr, b_pairs, a_total, log_c
