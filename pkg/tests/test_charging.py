import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from evpricing.charging import (
    ChargingCurve,
    UnreachableTargetError,
    adjusted_range_hours,
    charge_session,
    charging_duration,
    eca,
    energy_demand,
    max_range_hours,
    soc_from_time,
    time_from_soc,
)
from evpricing.scenario import ChargingParams, EvAgent, Level, spawn_evs

L3 = ChargingCurve(Level.L3)
L2 = ChargingCurve(Level.L2)


def f_l3(t, a=2.096, b=0.0749, c=0.0552):
    return 1 + a * math.exp(-b * t) - (1 + a) * math.exp(-c * t)


def ev(soc=0.3, risk=0.0, age=0.0, beta=0.02, loc=(5.0, 5.0)):
    return EvAgent(0, soc, 75.0, 5.0, age, risk, beta, loc, 0)


def test_boundary_values():
    assert soc_from_time(L3, 0.0) == 0.0
    assert soc_from_time(L2, 0.0) == 0.0
    assert soc_from_time(L3, 600.0) > 0.999
    assert soc_from_time(L3, 1e5) <= 1.0
    assert soc_from_time(L2, 225.0) == pytest.approx(1.0)
    assert soc_from_time(L2, 500.0) == 1.0
    assert time_from_soc(L2, 1.0) == pytest.approx(225.0)


def test_l3_matches_closed_form():
    for t in (1.0, 10.0, 42.0, 100.0, 300.0):
        assert soc_from_time(L3, t) == pytest.approx(f_l3(t), abs=1e-14)


def test_monotone_on_grid():
    t = np.linspace(0, 400, 1000)
    assert np.all(np.diff(soc_from_time(L3, t)) > 0)
    t2 = np.linspace(0, 224.9, 1000)
    assert np.all(np.diff(soc_from_time(L2, t2)) > 0)


def test_l3_never_reaches_one():
    assert np.all(soc_from_time(L3, np.linspace(0, 500, 2001)) < 1.0)


@pytest.mark.parametrize("soc,minutes", [(0.2, 9.652), (0.35, 15.90), (0.8, 43.49), (0.9, 57.75)])
def test_inverse_reference_points(soc, minutes):
    assert time_from_soc(L3, soc) == pytest.approx(minutes, abs=5e-3)


@pytest.mark.parametrize("soc", [0.01, 0.2, 0.5, 0.77, 0.95, 0.999])
def test_inverse_against_brent(soc):
    ref = brentq(lambda t: f_l3(t) - soc, 0, 2000, xtol=1e-13)
    assert time_from_soc(L3, soc) == pytest.approx(ref, abs=1e-8)


def test_round_trip_l3():
    t = np.linspace(0, 400, 801)
    back = np.array([time_from_soc(L3, s) for s in soc_from_time(L3, t)])
    assert np.abs(back - t).max() < 1e-6


def test_round_trip_l2():
    t = np.linspace(0, 224, 300)
    back = np.array([time_from_soc(L2, s) for s in soc_from_time(L2, t)])
    assert np.abs(back - t).max() < 1e-9


def test_unreachable_targets():
    with pytest.raises(UnreachableTargetError):
        time_from_soc(L3, 1.0)
    with pytest.raises(UnreachableTargetError):
        energy_demand(ev(), L3, 1.0)
    with pytest.raises(ValueError):
        time_from_soc(L3, -0.1)
    with pytest.raises(ValueError):
        soc_from_time(L3, -1.0)


def test_non_monotone_coefficients_rejected():
    with pytest.raises(ValueError):
        ChargingCurve(Level.L3, a=2.096, b=0.05, c=0.07)


def test_duration_and_energy():
    assert charging_duration(L3, 0.35, 0.9) == pytest.approx(57.75 - 15.90, abs=1e-2)
    assert charging_duration(L2, 0.2, 1.0) == pytest.approx(0.8 * 225)
    assert charging_duration(L3, 0.4, 0.4) == 0.0
    with pytest.raises(ValueError):
        charging_duration(L3, 0.5, 0.4)


@settings(max_examples=100, deadline=None)
@given(soc=st.floats(0.0, 0.9), target=st.floats(0.0, 0.95))
def test_energy_is_capacity_times_delta(soc, target):
    if target < soc:
        return
    e = ev(soc=soc)
    assert energy_demand(e, L3, target) == (target - soc) * 75.0


def test_session_respects_level_targets():
    from evpricing.scenario import Station

    st3 = Station(0, Level.L3, 2, 3, 1.4, 50.0, (0.0,), (1.0,), (0.0, 0.0))
    st2 = Station(1, Level.L2, 2, 3, 0.4, 20.0, (0.0,), (1.0,), (0.0, 0.0))
    p = ChargingParams()
    s3 = charge_session(ev(0.3), st3, p)
    s2 = charge_session(ev(0.3), st2, p)
    assert s3.target_soc == 0.9 and s2.target_soc == 1.0
    assert s3.energy == pytest.approx(0.6 * 75)
    assert s2.duration == pytest.approx(0.7 * 225)
    assert s3.initial_charge_time == pytest.approx(time_from_soc(L3, 0.3))
    # an EV already above target charges nothing
    assert charge_session(ev(0.95), st3, p).duration == 0.0


def test_range_budget():
    e = ev(soc=0.4)
    assert max_range_hours(e, 30.0) == pytest.approx(0.4 * 75 * 5 / 30)
    risky = ev(soc=0.4, risk=0.15, age=5)
    assert adjusted_range_hours(risky, 30.0) == pytest.approx(max_range_hours(e, 30.0) * 0.85 * math.exp(-0.1))


def test_eca_shrinks_with_risk_and_age(desk):
    # low charge (~5 km of range) so that the reachable set actually varies
    strict = 0
    for base in spawn_evs(desk, 9)[:40]:
        ref = EvAgent(base.id, 0.015, 75.0, 5.0, 0.0, 0.0, 0.02, base.location, 9)
        for risk, age in ((0.05, 0.0), (0.15, 0.0), (0.0, 8.0), (0.15, 8.0)):
            worse = EvAgent(base.id, 0.015, 75.0, 5.0, age, risk, 0.02, base.location, 9)
            assert eca(worse, desk, 9) <= eca(ref, desk, 9)
            strict += eca(worse, desk, 9) < eca(ref, desk, 9)
        more_beta = EvAgent(base.id, 0.015, 75.0, 5.0, 4.0, 0.0, 0.08, base.location, 9)
        assert eca(more_beta, desk, 9) <= eca(ref, desk, 9)
    assert strict > 0
