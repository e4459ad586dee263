import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wellde.economics import NEGATIVE_INFINITY, EconomicParams, npv, penalized_npv, water_cut
from wellde.flow_sim import INJECTOR, PRODUCER, FlowLimitViolation, ProductionProfile

B = 6.2898


def constant_profile(oil=100.0, water=0.0, injection=0.0, step_days=30.0, horizon_days=3650.0):
    """One producer (and optionally one injector) at constant rates."""
    n = int(math.ceil(horizon_days / step_days))
    dts = np.full(n, horizon_days / n) if n else np.zeros(0)
    times = np.concatenate([[0.0], np.cumsum(dts)[:-1]])
    zeros = np.zeros((n, 2))
    o, w, i = zeros.copy(), zeros.copy(), zeros.copy()
    o[:, 1], w[:, 1], i[:, 0] = oil, water, injection
    return ProductionProfile(["I1", "P1"], [INJECTOR, PRODUCER], times, dts, o, w, i,
                             np.zeros((n, 2), bool), np.full(n, max(oil + water, injection)),
                             np.column_stack([i[:, 0], -(o[:, 1] + w[:, 1])]))


def random_profile(rng, n=40):
    dts = rng.uniform(5.0, 60.0, n)
    times = np.concatenate([[0.0], np.cumsum(dts)[:-1]])
    o = rng.uniform(0, 200, (n, 3))
    w = rng.uniform(0, 200, (n, 3))
    i = rng.uniform(0, 400, (n, 3))
    return ProductionProfile(["a", "b", "c"], [PRODUCER] * 3, times, dts, o, w, i, np.zeros((n, 3), bool),
                             np.zeros(n), np.zeros((n, 3)))


def test_table2_defaults():
    e = EconomicParams()
    assert (e.c_o, e.c_w_disp, e.c_w_inj, e.r, e.water_cut_threshold) == (80.0, 12.0, 8.0, 0.10, 0.78)


@pytest.mark.parametrize("kw", [dict(c_o=-1.0), dict(r=-0.1), dict(water_cut_threshold=1.5)])
def test_params_invariants(kw):
    with pytest.raises(ValueError):
        EconomicParams(**kw)


@pytest.mark.parametrize("qw,qo,expected", [(0, 5, 0.0), (5, 0, 1.0), (3.9, 1.1, 0.78), (0, 0, 0.0)])
def test_water_cut(qw, qo, expected):
    assert water_cut(qw, qo) == pytest.approx(expected)


def test_null_profile_is_worth_nothing():
    assert npv(constant_profile(oil=0.0), EconomicParams()) == 0.0
    empty = constant_profile(horizon_days=0.0, step_days=1.0)
    assert npv(empty, EconomicParams()) == 0.0
    assert penalized_npv(empty, EconomicParams()) == 0.0


def test_undiscounted_constant_oil_matches_closed_form():
    expected = 80 * 100 * B * 3650
    assert expected == pytest.approx(1.8366e8, rel=1e-4)
    assert npv(constant_profile(), EconomicParams(r=0.0)) == pytest.approx(expected, rel=1e-4)


def test_discounted_constant_oil_matches_closed_form():
    # integral over 10 years of c*q*(1.1)^-t dt, rates per day and t in years
    expected = 80 * 100 * B * 365 * (1 - 1.1 ** -10) / math.log(1.1)
    assert npv(constant_profile(), EconomicParams(r=0.10)) == pytest.approx(expected, rel=1e-3)


def test_costs_enter_with_the_right_sign():
    prof = constant_profile(oil=0.0, water=10.0, injection=20.0)
    expected = -(12 * 10 + 8 * 20) * B * 3650
    assert npv(prof, EconomicParams(r=0.0)) == pytest.approx(expected, rel=1e-12)


def test_flow_limit_violation_is_minus_infinity():
    v = FlowLimitViolation(3, 90.0, "P1", 1200.0, 1000.0)
    assert penalized_npv(v, EconomicParams()) == NEGATIVE_INFINITY == -math.inf


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_penalized_npv_passes_profiles_through(seed):
    prof = random_profile(np.random.default_rng(seed))
    econ = EconomicParams(r=0.07)
    assert penalized_npv(prof, econ) == npv(prof, econ)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 200.0), st.floats(0.0, 50.0), st.floats(0.0, 50.0))
def test_npv_is_linear_in_each_price(seed, c_o, c_wd, c_wi):
    prof = random_profile(np.random.default_rng(seed))
    basis = [npv(prof, EconomicParams(c_o=a, c_w_disp=b, c_w_inj=c, r=0.1))
             for a, b, c in ((1, 0, 0), (0, 1, 0), (0, 0, 1))]
    total = npv(prof, EconomicParams(c_o=c_o, c_w_disp=c_wd, c_w_inj=c_wi, r=0.1))
    combo = c_o * basis[0] + c_wd * basis[1] + c_wi * basis[2]
    assert total == pytest.approx(combo, rel=1e-9, abs=1e-3)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 500.0), st.floats(0.0, 1.0), st.floats(0.001, 0.5))
def test_discounting_never_adds_value_to_positive_cash_flows(oil, water_fraction, r):
    # disposal at 12 $/bbl never outweighs oil at 80 $/bbl while water <= oil
    prof = constant_profile(oil=oil, water=water_fraction * oil)
    assert npv(prof, EconomicParams(r=0.0)) >= npv(prof, EconomicParams(r=r))


@pytest.mark.parametrize("r", [0.0, 0.1])
def test_halving_the_step_barely_changes_npv(r):
    coarse = npv(constant_profile(step_days=30.0), EconomicParams(r=r))
    fine = npv(constant_profile(step_days=15.0), EconomicParams(r=r))
    assert abs(fine - coarse) < 5e-4 * abs(fine)
