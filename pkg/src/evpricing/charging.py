"""Charging curves, SOC/time conversions and SOC-limited reachability."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import ChargingParams, EvAgent, Level, Scenario, Station

_BRACKET_MINUTES = 2000.0
_INVERSE_TOL = 1e-12


class UnreachableTargetError(ValueError):
    """Target SOC at or above the fast-charge asymptote."""


@dataclass(frozen=True)
class ChargingCurve:
    level: Level
    rate: float = 1.0 / 225.0  # L2, SOC per minute
    a: float = 2.096
    b: float = 0.0749
    c: float = 0.0552

    def __post_init__(self):
        if self.level is Level.L2 and not self.rate > 0:
            raise ValueError("L2 rate must be > 0")
        if self.level is Level.L3:
            # f(0)=0 holds by construction; f'(0) > 0 and c < b keep it increasing
            if not (0 < self.c < self.b and (1 + self.a) * self.c > self.a * self.b):
                raise ValueError("L3 coefficients must give a monotone curve (0 < c < b, (1+a)c > ab)")

    @classmethod
    def for_station(cls, station: Station, params: ChargingParams | None = None) -> "ChargingCurve":
        p = params or ChargingParams()
        if station.level is Level.L2:
            return cls(Level.L2, rate=p.l2_rate)
        return cls(Level.L3, a=p.l3_a, b=p.l3_b, c=p.l3_c)

    def _deficit(self, minutes):
        # 1 - f(T), accurate near saturation
        return (1.0 + self.a) * np.exp(-self.c * minutes) - self.a * np.exp(-self.b * minutes)


@dataclass(frozen=True)
class ChargeSession:
    initial_charge_time: float  # minutes
    duration: float  # minutes
    energy: float  # kWh
    target_soc: float


def soc_from_time(curve: ChargingCurve, minutes):
    """Normalised SOC after ``minutes`` of charging from empty."""
    t = np.asarray(minutes, dtype=float)
    if np.any(t < 0):
        raise ValueError("minutes must be >= 0")
    if curve.level is Level.L2:
        out = np.minimum(curve.rate * t, 1.0)
    else:
        out = 1.0 - curve._deficit(t)
    return float(out) if out.ndim == 0 else out


def time_from_soc(curve: ChargingCurve, soc: float) -> float:
    """Minutes of charging from empty needed to reach ``soc``."""
    if soc < 0:
        raise ValueError("soc must be >= 0")
    if curve.level is Level.L2:
        if soc > 1.0:
            raise UnreachableTargetError(f"soc {soc} exceeds 1")
        return soc / curve.rate
    if soc >= 1.0:
        raise UnreachableTargetError(f"soc {soc} is not reachable on the fast-charge curve")
    if soc == 0.0:
        return 0.0
    if soc < 0.5:
        g = lambda t: 1.0 - curve._deficit(t) - soc  # noqa: E731
    else:
        # bisect on the log-deficit: well conditioned as soc -> 1
        target = math.log1p(-soc)
        g = lambda t: target - math.log(curve._deficit(t))  # noqa: E731
    lo, hi = 0.0, _BRACKET_MINUTES
    while g(hi) < 0:
        lo, hi = hi, hi * 2.0
    while hi - lo > _INVERSE_TOL * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def charging_duration(curve: ChargingCurve, initial_soc: float, target_soc: float) -> float:
    """Minutes needed to go from ``initial_soc`` to ``target_soc``."""
    if target_soc < initial_soc:
        raise ValueError(f"target_soc {target_soc} below initial_soc {initial_soc}")
    if target_soc == initial_soc:
        return 0.0
    return time_from_soc(curve, target_soc) - time_from_soc(curve, initial_soc)


def energy_demand(ev: EvAgent, curve: ChargingCurve, target_soc: float) -> float:
    if target_soc < ev.initial_soc:
        raise ValueError(f"target_soc {target_soc} below initial_soc {ev.initial_soc}")
    if curve.level is Level.L3 and target_soc >= 1.0:
        raise UnreachableTargetError("fast-charge target must be < 1")
    return (target_soc - ev.initial_soc) * ev.battery_capacity


def target_soc_for(station: Station, params: ChargingParams) -> float:
    return params.target_soc_l2 if station.level is Level.L2 else params.target_soc_l3


def charge_session(ev: EvAgent, station: Station, params: ChargingParams) -> ChargeSession:
    curve = ChargingCurve.for_station(station, params)
    target = max(target_soc_for(station, params), ev.initial_soc)
    return ChargeSession(
        initial_charge_time=time_from_soc(curve, ev.initial_soc) if ev.initial_soc < 1 else 0.0,
        duration=charging_duration(curve, ev.initial_soc, target),
        energy=energy_demand(ev, curve, target),
        target_soc=target,
    )


def max_range_hours(ev: EvAgent, speed: float) -> float:
    """Travel-time budget of the remaining charge at ``speed`` km/h."""
    if not speed > 0:
        raise ValueError("speed must be > 0")
    return ev.initial_soc * ev.battery_capacity * ev.consumption_rate / speed


def adjusted_range_hours(ev: EvAgent, speed: float) -> float:
    """Range budget shrunk by risk aversion and battery ageing."""
    return max_range_hours(ev, speed) * (1.0 - ev.risk_aversion) * math.exp(-ev.degradation_rate * ev.age_years)


def range_speed(scenario: Scenario) -> float:
    tr = scenario.travel
    return tr.speed if tr.speed > 0 else 30.0


def eca(ev: EvAgent, scenario: Scenario, hour: int) -> set[int]:
    """Ids of the stations reachable on the adjusted range."""
    budget = adjusted_range_hours(ev, range_speed(scenario))
    return {
        st.id for st in scenario.stations if scenario.travel.hours(ev.location, st, hour) <= budget
    }
