import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from epirates.core import CaseRecord, DataError
from epirates.dataio import (
    dequantize,
    dumps,
    inject_missingness,
    load_cases,
    load_config,
    read_case_rows,
    read_locations,
    round_sig,
    write_case_table,
    write_records_csv,
)

HEADER = "case_id,exposure_time,infection_time,removal_time,infection_group,removal_group,x,y\n"


def complete(n, seed=0):
    rng = np.random.default_rng(seed)
    inf = np.sort(rng.uniform(0, 10, n))
    return [CaseRecord(k + 1, float(i), float(i), float(i + rng.exponential())) for k, i in enumerate(inf)]


# ---------------------------------------------------------------- case tables

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@st.composite
def case_lists(draw):
    n = draw(st.integers(1, 8))
    out = []
    for k in range(n):
        i = draw(st.one_of(st.none(), finite))
        r = draw(st.one_of(st.none(), finite)) if i is not None else draw(finite)
        if i is not None and r is not None and not r > i:
            r = i + draw(st.floats(1e-3, 100))
            if not r > i:
                r = None
        loc = draw(st.one_of(st.none(), st.tuples(finite, finite)))
        group = draw(st.one_of(st.none(), st.sampled_from(["a", "b", "house 3"])))
        out.append(CaseRecord(k + 1, draw(st.one_of(st.none(), finite)), i, r, group, group, loc))
    return out


@given(case_lists())
def test_case_table_round_trip_is_exact(cases):
    text = write_case_table(cases)
    assert load_cases(io.StringIO(text)) == cases


def test_round_trip_through_file(tmp_path):
    cases = complete(5)
    path = tmp_path / "cases.csv"
    write_case_table(cases, path)
    assert load_cases(path) == cases


def test_negative_zero_is_written_as_zero():
    text = write_case_table([CaseRecord(1, -0.0, 0.0, 1.0)])
    assert "-0.0" not in text


def test_missing_tokens():
    text = HEADER + "1,,0,NA,,,NA,NA\n2,NA,NA,2.5,g,h,1,2\n"
    cases = load_cases(io.StringIO(text))
    assert cases[0].removal_time is None and cases[0].exposure_time is None
    assert cases[1].infection_time is None and cases[1].location == (1.0, 2.0)
    assert cases[1].infection_group == "g"


@pytest.mark.parametrize(
    "body, message",
    [
        ("1,NA,x,2,NA,NA,NA,NA\n", "not a number"),
        ("1,NA,NA,NA,NA,NA,NA,NA\n", "neither"),
        ("1,NA,3,2,NA,NA,NA,NA\n", "not after"),
        ("1,NA,0,2,NA,NA,1,NA\n", "both x and y"),
        ("1,NA,0,2,NA,NA,NA,NA\n1,NA,1,2,NA,NA,NA,NA\n", "duplicate"),
        ("a,NA,0,2,NA,NA,NA,NA\n", "not an integer"),
    ],
)
def test_bad_tables(body, message):
    with pytest.raises(DataError, match=message):
        load_cases(io.StringIO(HEADER + body))


def test_missing_columns():
    with pytest.raises(DataError, match="lacks columns"):
        read_case_rows(io.StringIO("case_id,infection_time\n1,0\n"))


def test_offset_convention():
    # symptom onset on day 5 and rash on day 7: infectious from day 4 to day 10
    text = HEADER + "1,NA,5,7,NA,NA,NA,NA\n2,NA,NA,9,NA,NA,NA,NA\n"
    cases = load_cases(io.StringIO(text), infection_offset=-1, removal_offset=3)
    assert (cases[0].infection_time, cases[0].removal_time) == (4.0, 10.0)
    assert cases[1].infection_time is None and cases[1].removal_time == 12.0


def test_read_locations():
    locs = read_locations(io.StringIO("x,y\n0,1\n2.5,3\n"))
    assert locs.shape == (2, 2) and locs[1, 0] == 2.5
    assert read_locations(io.StringIO("x,y\n")).shape == (0, 2)
    with pytest.raises(DataError):
        read_locations(io.StringIO("a,b\n1,2\n"))


# ---------------------------------------------------------------- dequantization


def test_dequantize_zero_sigma_is_identity():
    i, r = [0.0, 3.0, None], [2.0, None, 5.0]
    assert dequantize(i, r, 0.0, seed=1) == (i, r)


def test_dequantize_rejects_degenerate_pair():
    with pytest.raises(DataError, match="case 2"):
        dequantize([0.0, 4.0], [2.0, 4.0], 0.1, seed=1)


def test_dequantize_is_seeded_and_valid():
    i = [float(d) for d in range(20)]
    r = [d + 1.0 for d in i]
    a = dequantize(i, r, 0.4, seed=3)
    assert a == dequantize(i, r, 0.4, seed=3)
    assert all(y > x for x, y in zip(*a))
    noise = np.array(a[0]) - np.array(i)
    assert np.all(noise != 0) and np.std(noise) < 1.0


class _Adversarial(np.random.Generator):
    """Pushes every infection time up and every removal time down."""

    calls = 0

    def normal(self, loc=0.0, scale=1.0, size=None):
        self.calls += 1
        return scale if self.calls % 2 else -scale


def test_dequantize_gives_up_after_redraws():
    rng = _Adversarial(np.random.PCG64(0))
    with pytest.raises(DataError, match="no valid"):
        dequantize([0.0], [0.1], 1.0, seed=rng)
    assert rng.calls == 200


def test_load_cases_dequantize_keeps_incubation():
    text = HEADER + "1,-1,0,2,NA,NA,NA,NA\n2,0,1,3,NA,NA,NA,NA\n"
    cases = load_cases(io.StringIO(text), noise_sd=0.1, seed=5)
    for c in cases:
        assert c.infection_time - c.exposure_time == pytest.approx(1.0)
        assert c.infection_time != round(c.infection_time)


def test_dequantized_daily_data_shift_small():
    from epirates.core import RateModel
    from epirates.estimate import impute_beta_tilde, mle_gamma
    from epirates.simulate import conditional_simulate

    shifts = []
    for rep in range(20):
        log = conditional_simulate(RateModel(188, 0.6, 0.3), target_n=150, omega=0.2, seed=rep)
        daily = [CaseRecord(c.id, infection_time=math.floor(c.infection_time),
                            removal_time=max(math.floor(c.removal_time), math.floor(c.infection_time) + 1))
                 for c in log.cases]
        masked, _ = inject_missingness(daily, 0.2, 0.5, seed=rep)
        g = mle_gamma(masked)
        base = impute_beta_tilde(masked, 188, g) / g
        i, r = dequantize([c.infection_time for c in masked], [c.removal_time for c in masked], 0.1, seed=rep)
        noisy = [CaseRecord(c.id, infection_time=a, removal_time=b) for c, a, b in zip(masked, i, r)]
        g2 = mle_gamma(noisy)
        shifts.append(abs(impute_beta_tilde(noisy, 188, g2) / g2 - base))
    assert max(shifts) <= 0.2


# ---------------------------------------------------------------- missingness


def test_inject_nothing():
    cases = complete(10)
    out, rep = inject_missingness(cases, 0.0, 0.5, seed=1)
    assert out == cases and rep.partial == 0


def test_inject_all_infection_times():
    out, rep = inject_missingness(complete(10), 1.0, 1.0, seed=1)
    assert all(c.infection_time is None and c.removal_time is not None for c in out)
    assert len(rep.infection_missing) == 10


def test_inject_is_seeded_and_never_both():
    cases = complete(50)
    a, ra = inject_missingness(cases, 0.5, 0.5, seed=4)
    b, rb = inject_missingness(cases, 0.5, 0.5, seed=4)
    assert a == b and ra == rb
    assert all(c.infection_time is not None or c.removal_time is not None for c in a)
    assert set(ra.infection_missing).isdisjoint(ra.removal_missing)
    assert len(ra.infection_missing) + len(ra.removal_missing) == ra.partial


def test_inject_rates():
    cases = complete(200)
    partial, inf = [], []
    for s in range(200):
        _, rep = inject_missingness(cases, 0.3, 0.8, seed=s)
        partial.append(rep.partial)
        inf.append(len(rep.infection_missing))
    assert np.mean(partial) == pytest.approx(60, abs=1.5)
    assert np.mean(inf) == pytest.approx(48, abs=1.5)


def test_inject_rejects_partial_input():
    with pytest.raises(DataError):
        inject_missingness([CaseRecord(1, removal_time=1.0)], 0.5, 0.5)


# ---------------------------------------------------------------- serialization


def test_round_sig():
    assert round_sig(1 / 3) == 0.333333333333
    assert round_sig(0.0) == 0.0


def test_dumps_handles_numpy_and_nan():
    doc = json.loads(dumps({"a": np.float64(2 / 3), "b": np.arange(2), "c": float("nan"), "d": np.bool_(True)}))
    assert doc == {"a": 0.666666666667, "b": [0, 1], "c": None, "d": True}


def test_write_records_csv():
    text = write_records_csv([{"a": 1.0 / 3, "b": None, "c": True}], ("a", "b", "c"))
    assert text == "a,b,c\n0.333333333333,NA,true\n"


def test_load_config(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('betas = [1.0, 2.0]\nseed = 3\n')
    assert load_config(p) == {"betas": [1.0, 2.0], "seed": 3}
