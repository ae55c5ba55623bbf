"""Upper-level objective terms and benchmark price schedules.

Payment is billed on delivered energy: an EV pays ``energy * price`` for a
session. Revenue and EV utility therefore share the same payment term, and
the performance index at ``omega = 0.5`` only depends on prices through the
choices they induce.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

import numpy as np

if TYPE_CHECKING:
    from .choice import ChoiceEquilibrium
    from .scenario import Scenario


class PriceBoundError(ValueError):
    pass


@dataclass(frozen=True)
class EconParams:
    kappa: float = 1.0  # $/kWh charging satisfaction
    vot: float = 5.0  # $/h waiting-time penalty
    rejection_penalty: float = 30.0  # $/EV
    omega: float = 0.5
    price_floor: float = 0.20  # $/kWh
    price_ceiling: float = 0.80  # $/kWh

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError(f"omega must lie in [0, 1] (got {self.omega})")
        if self.price_floor > self.price_ceiling:
            raise ValueError("price_floor must not exceed price_ceiling")


@dataclass(frozen=True)
class PriceSchedule:
    """Prices in $/kWh, shape ``(n_stations, n_hours)``."""

    prices: np.ndarray

    def __post_init__(self):
        arr = np.array(self.prices, dtype=float)
        if arr.ndim != 2:
            raise ValueError("prices must be a (stations, hours) matrix")
        arr.setflags(write=False)
        object.__setattr__(self, "prices", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.prices.shape

    def to_dict(self) -> dict:
        return {"unit": "$/kWh", "prices": [[round(float(v), 6) for v in row] for row in self.prices]}

    @classmethod
    def from_dict(cls, doc: dict) -> "PriceSchedule":
        return cls(np.asarray(doc["prices"], dtype=float))


@dataclass(frozen=True)
class UtilityBreakdown:
    ev_utility_total: float
    per_ev: np.ndarray
    cs_revenue: float
    queue_penalty: float
    performance_index: float
    omega: float

    def recomputed_index(self) -> float:
        return performance_index(self.cs_revenue, self.ev_utility_total, self.omega)


def price_bounds(scenario: "Scenario") -> tuple[np.ndarray, np.ndarray]:
    """Elementwise feasible interval, each of shape ``(n_stations, horizon)``."""
    grid = np.array([s.grid_price for s in scenario.stations], dtype=float)
    cap = np.array([s.price_cap for s in scenario.stations], dtype=float)
    lo = np.maximum(grid, scenario.econ.price_floor)
    hi = np.minimum(cap, scenario.econ.price_ceiling)
    if np.any(lo > hi):
        i, t = np.argwhere(lo > hi)[0]
        raise PriceBoundError(f"empty price interval at station index {i}, hour {t}")
    return lo, hi


def clamp_prices(schedule: PriceSchedule, scenario: "Scenario") -> PriceSchedule:
    lo, hi = price_bounds(scenario)
    return PriceSchedule(np.clip(schedule.prices, lo, hi))


def fixed_schedule(scenario: "Scenario", level: float) -> PriceSchedule:
    lo, hi = price_bounds(scenario)
    _check_level(level, lo, hi, "fixed level")
    return PriceSchedule(np.full(lo.shape, float(level)))


def tou_schedule(
    scenario: "Scenario",
    peak_hours: Iterable[int] | None = None,
    peak: float = 0.6,
    offpeak: float = 0.3,
) -> PriceSchedule:
    """Two-level tariff; ``peak_hours`` defaults to 8..17 inclusive."""
    if peak_hours is None:
        peak_hours = range(8, 18)
    lo, hi = price_bounds(scenario)
    _check_level(peak, lo, hi, "peak price")
    _check_level(offpeak, lo, hi, "off-peak price")
    row = np.full(scenario.horizon_hours, float(offpeak))
    for h in peak_hours:
        if 0 <= h < scenario.horizon_hours:
            row[h] = peak
    return PriceSchedule(np.tile(row, (scenario.n_stations, 1)))


def _check_level(level: float, lo: np.ndarray, hi: np.ndarray, what: str) -> None:
    if level < lo.max() - 1e-12 or level > hi.min() + 1e-12:
        raise PriceBoundError(f"{what} {level} outside the feasible band [{lo.max()}, {hi.min()}]")


# ---------------------------------------------------------------------------
# per-hour terms; ``energy`` is (n_ev, n_station) kWh, ``probs`` matches it


def ev_utility(
    eq: "ChoiceEquilibrium", energy: np.ndarray, prices: np.ndarray, econ: EconParams
) -> np.ndarray:
    """Expected utility of each EV for one hour, before rejection penalties."""
    gain = econ.kappa * energy - energy * np.asarray(prices)[None, :] - eq.waits[None, :] * econ.vot
    return (gain * eq.probs).sum(axis=1)


def aggregate_ev_utility(
    per_ev: np.ndarray, rejected_counts: np.ndarray, unserved_count: float, econ: EconParams
) -> float:
    return float(
        np.sum(per_ev)
        - np.sum(rejected_counts) * econ.rejection_penalty
        - unserved_count * econ.rejection_penalty
    )


def cs_revenue(
    eq: "ChoiceEquilibrium", energy: np.ndarray, prices: np.ndarray, grid_price: np.ndarray
) -> float:
    margin = np.asarray(prices) - np.asarray(grid_price)
    return float((energy * margin[None, :] * eq.probs).sum())


def queue_penalty(eq: "ChoiceEquilibrium", econ: EconParams) -> float:
    """Wait losses plus rejection penalties (stranded EVs excluded)."""
    wait_loss = float((eq.probs * eq.waits[None, :]).sum() * econ.vot)
    return wait_loss + float(np.sum(eq.rejected)) * econ.rejection_penalty


def performance_index(rev: float, ev_util: float, econ_or_omega) -> float:
    omega = econ_or_omega.omega if isinstance(econ_or_omega, EconParams) else float(econ_or_omega)
    return omega * rev + (1.0 - omega) * ev_util


def breakdown(
    eq: "ChoiceEquilibrium",
    energy: np.ndarray,
    prices: np.ndarray,
    grid_price: np.ndarray,
    econ: EconParams,
) -> UtilityBreakdown:
    per_ev = ev_utility(eq, energy, prices, econ)
    util = aggregate_ev_utility(per_ev, eq.rejected, eq.unserved, econ)
    rev = cs_revenue(eq, energy, prices, grid_price)
    return UtilityBreakdown(
        ev_utility_total=util,
        per_ev=per_ev,
        cs_revenue=rev,
        queue_penalty=queue_penalty(eq, econ),
        performance_index=performance_index(rev, util, econ),
        omega=econ.omega,
    )
