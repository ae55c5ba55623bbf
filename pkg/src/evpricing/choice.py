"""Follower model: station attractiveness, logit choice and the MSA fixed point.

Everything price-independent for one hour (reachability, travel and charging
times, delivered energy, perception errors) is precomputed once in an
:class:`HourContext`; the kernel in :mod:`evpricing.kernels` then solves the
choice equilibrium for a whole population of price vectors at a time.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .charging import adjusted_range_hours, charge_session, range_speed
from .queueing import QueueParams, expected_wait, stationary_distribution
from .scenario import GUMBEL_STREAM, SAMPLE_STREAM, EvAgent, Scenario, Station, spawn_evs

MODES = {
    "deterministic_dc": kernels.MODE_DC,
    "mnl_standard": kernels.MODE_STANDARD,
    "mnl_msa": kernels.MODE_MSA,
}
MODE_ALIASES = {"dc": "deterministic_dc", "mnl": "mnl_standard", "standard": "mnl_standard", "msa": "mnl_msa"}


@dataclass(frozen=True)
class ChoiceConfig:
    theta: float = 0.05
    mode: str = "mnl_msa"
    gumbel_scale: float = 1.0
    msa_max_iters: int = 50
    msa_tol: float = 1e-3
    cost_floor: float = 1e-3  # hours

    def __post_init__(self):
        mode = MODE_ALIASES.get(self.mode, self.mode)
        if mode not in MODES:
            raise ValueError(f"unknown choice mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if not self.theta > 0:
            raise ValueError("theta must be > 0")
        if not self.msa_tol > 0:
            raise ValueError("msa_tol must be > 0")
        if self.gumbel_scale < 0:
            raise ValueError("gumbel_scale must be >= 0")
        if self.msa_max_iters < 0:
            raise ValueError("msa_max_iters must be >= 0")

    @property
    def mode_code(self) -> int:
        return MODES[self.mode]


@dataclass(frozen=True)
class ChoiceEquilibrium:
    probs: np.ndarray  # (n_ev, n_station)
    arrival_rates: np.ndarray
    waits: np.ndarray
    rejected: np.ndarray  # expected rejections per station
    rejection_prob: np.ndarray
    iterations_used: int
    converged: bool
    unserved: int  # EVs with nothing in reach

    @classmethod
    def empty(cls, n_stations: int) -> "ChoiceEquilibrium":
        z = np.zeros(n_stations)
        return cls(np.zeros((0, n_stations)), z, z.copy(), z.copy(), z.copy(), 0, True, 0)


@dataclass(frozen=True)
class HourContext:
    """Price-independent inputs of one hour's choice problem."""

    hour: int
    evs: tuple[EvAgent, ...]
    station_ids: tuple[int, ...]
    eca: np.ndarray  # (E, S) uint8
    travel: np.ndarray  # (E, S) hours
    duration: np.ndarray  # (E, S) charging hours
    energy: np.ndarray  # (E, S) kWh
    eps: np.ndarray  # (E, S) perception errors
    servers: np.ndarray  # (S,) poles available this hour
    capacity: np.ndarray  # (S,)
    service_rate: np.ndarray
    power: np.ndarray
    grid_price: np.ndarray
    lower: np.ndarray  # price bounds for this hour
    upper: np.ndarray

    @property
    def n_ev(self) -> int:
        return len(self.evs)

    @property
    def unserved(self) -> int:
        return int((self.eca.sum(axis=1) == 0).sum()) if self.n_ev else 0

    @property
    def base_cost(self) -> np.ndarray:
        return self.travel + self.duration


def gumbel_draws(scenario: Scenario, hour: int, shape: tuple[int, int], scale: float, rng_seed: int | None = None) -> np.ndarray:
    if scale == 0 or shape[0] == 0:
        return np.zeros(shape)
    seed = scenario.seed if rng_seed is None else rng_seed
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, GUMBEL_STREAM, hour]))
    return rng.gumbel(0.0, scale, shape)


def hour_context(
    scenario: Scenario,
    hour: int,
    config: ChoiceConfig | None = None,
    evs: Sequence[EvAgent] | None = None,
    occupied: Sequence[int] | None = None,
    rng_seed: int | None = None,
) -> HourContext:
    """Assemble the choice inputs for ``hour``.

    ``occupied`` is the number of poles still held by vehicles from earlier
    hours; each station keeps at least one pole and the waiting room shrinks
    with it.
    """
    from .economics import price_bounds

    config = config or scenario.choice or ChoiceConfig()
    if evs is None:
        evs = spawn_evs(scenario, hour, rng_seed)
    stations = scenario.stations
    S, E = len(stations), len(evs)
    params = scenario.ev_distributions.charging
    speed = range_speed(scenario)

    travel = np.zeros((E, S))
    duration = np.zeros((E, S))
    energy = np.zeros((E, S))
    mask = np.zeros((E, S), dtype=np.uint8)
    sessions = {}
    for e, ev in enumerate(evs):
        budget = adjusted_range_hours(ev, speed)
        for i, st in enumerate(stations):
            tt = scenario.travel.hours(ev.location, st, hour)
            travel[e, i] = tt
            mask[e, i] = tt <= budget
            key = (ev.initial_soc, ev.battery_capacity, st.level)
            if key not in sessions:
                sessions[key] = charge_session(ev, st, params)
            sess = sessions[key]
            duration[e, i] = sess.duration / 60.0
            energy[e, i] = sess.energy

    poles = np.array([s.poles for s in stations], dtype=np.int64)
    cap = np.array([s.capacity for s in stations], dtype=np.int64)
    if occupied is not None:
        held = np.minimum(np.asarray(occupied, dtype=np.int64), poles - 1)
        held = np.maximum(held, 0)
        poles = poles - held
        cap = cap - held
    lo, hi = price_bounds(scenario)
    eps = gumbel_draws(scenario, hour, (E, S), config.gumbel_scale, rng_seed)
    return HourContext(
        hour=hour,
        evs=tuple(evs),
        station_ids=tuple(s.id for s in stations),
        eca=mask,
        travel=travel,
        duration=duration,
        energy=energy,
        eps=eps,
        servers=poles,
        capacity=cap,
        service_rate=np.array([s.service_rate for s in stations], dtype=float),
        power=np.array([s.power for s in stations], dtype=float),
        grid_price=np.array([s.grid_price[hour] for s in stations], dtype=float),
        lower=lo[:, hour].copy(),
        upper=hi[:, hour].copy(),
    )


# ---------------------------------------------------------------------------
# single-EV helpers


def total_cost(ev: EvAgent, station: Station, scenario: Scenario, hour: int, waits, station_index: int | None = None) -> float:
    """Travel + expected wait + charging time, in hours."""
    idx = station_index if station_index is not None else [s.id for s in scenario.stations].index(station.id)
    sess = charge_session(ev, station, scenario.ev_distributions.charging)
    return scenario.travel.hours(ev.location, station, hour) + float(waits[idx]) + sess.duration / 60.0


def attractiveness_value(poles: float, power: float, price: float, cost: float, cost_floor: float = 1e-3) -> float:
    if not price > 0:
        raise ValueError("price must be > 0")
    c = max(cost, cost_floor)
    return poles * power / (price * c * c)


def attractiveness(ev: EvAgent, station: Station, scenario: Scenario, hour: int, price: float, waits, cost_floor: float = 1e-3) -> float:
    cost = total_cost(ev, station, scenario, hour, waits)
    return attractiveness_value(station.poles, station.power, price, cost, cost_floor)


def arrival_rates(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2:
        raise ValueError("probs must be a (n_ev, n_station) matrix")
    return probs.sum(axis=0)


def context_probabilities(ctx: HourContext, prices, waits, config: ChoiceConfig) -> np.ndarray:
    """One logit (or argmax) pass with the supplied station waits."""
    from ._fallback import _probabilities

    prices = np.atleast_2d(np.asarray(prices, dtype=float))
    waits = np.atleast_2d(np.asarray(waits, dtype=float))
    out = _probabilities(
        prices, ctx.eca, ctx.base_cost, ctx.eps, waits, ctx.servers.astype(float), ctx.power,
        config.theta, config.mode_code, config.cost_floor,
    )
    return out[0]


def choice_probabilities(
    evs: Sequence[EvAgent],
    scenario: Scenario,
    hour: int,
    prices,
    waits,
    config: ChoiceConfig,
    rng_seed: int | None = None,
) -> np.ndarray:
    ctx = hour_context(scenario, hour, config, evs=evs, rng_seed=rng_seed)
    return context_probabilities(ctx, prices, waits, config)


# ---------------------------------------------------------------------------
# equilibrium


@dataclass(frozen=True)
class BatchEquilibrium:
    probs: np.ndarray  # (N, E, S)
    arrival_rates: np.ndarray  # (N, S)
    waits: np.ndarray
    rejection_prob: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray

    @property
    def rejected(self) -> np.ndarray:
        return self.arrival_rates * self.rejection_prob

    def member(self, k: int, unserved: int) -> ChoiceEquilibrium:
        return ChoiceEquilibrium(
            probs=self.probs[k],
            arrival_rates=self.arrival_rates[k],
            waits=self.waits[k],
            rejected=self.rejected[k],
            rejection_prob=self.rejection_prob[k],
            iterations_used=int(self.iterations[k]),
            converged=bool(self.converged[k]),
            unserved=unserved,
        )


def solve_batch(ctx: HourContext, prices: np.ndarray, config: ChoiceConfig, threads: int = 1, backend=None) -> BatchEquilibrium:
    """Choice equilibrium for every row of ``prices`` (shape ``(N, S)``).

    Rows are independent, so splitting them across threads cannot change the
    result.
    """
    prices = np.ascontiguousarray(np.atleast_2d(prices), dtype=float)
    fn = backend or kernels.equilibrium_batch
    args = (
        ctx.eca, ctx.base_cost, ctx.eps, ctx.servers, ctx.capacity, ctx.service_rate, ctx.power,
        config.theta, config.mode_code, config.msa_max_iters, config.msa_tol, config.cost_floor,
    )
    n = prices.shape[0]
    if threads <= 1 or n < 2 * threads:
        parts = [fn(prices, *args)]
    else:
        bounds = np.linspace(0, n, threads + 1).astype(int)
        chunks = [prices[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: fn(c, *args), chunks))
    cat = [np.concatenate([p[k] for p in parts], axis=0) for k in range(6)]
    return BatchEquilibrium(*cat[:4], iterations=cat[4], converged=cat[5].astype(bool))


def equilibrium(ctx: HourContext, prices, config: ChoiceConfig, backend=None) -> ChoiceEquilibrium:
    if ctx.n_ev == 0:
        return ChoiceEquilibrium.empty(len(ctx.station_ids))
    batch = solve_batch(ctx, np.asarray(prices, dtype=float)[None, :], config, backend=backend)
    return batch.member(0, ctx.unserved)


def msa_equilibrium(
    evs: Sequence[EvAgent],
    scenario: Scenario,
    hour: int,
    prices,
    config: ChoiceConfig,
    rng_seed: int | None = None,
    occupied: Sequence[int] | None = None,
) -> ChoiceEquilibrium:
    """Successive-averages fixed point between logit choice and queue waits.

    The mode in ``config`` is honoured, so ``deterministic_dc`` and
    ``mnl_standard`` return the single-pass choice evaluated against its own
    induced queues.
    """
    ctx = hour_context(scenario, hour, config, evs=evs, occupied=occupied, rng_seed=rng_seed)
    return equilibrium(ctx, prices, config)


def station_waits(ctx: HourContext, lam: np.ndarray) -> np.ndarray:
    """Reference (scalar) computation of per-station waits; used by tests and reports."""
    return np.array([
        expected_wait(QueueParams(float(l), float(m), int(s), int(c)))
        for l, m, s, c in zip(lam, ctx.service_rate, ctx.servers, ctx.capacity)
    ])


def station_full_prob(ctx: HourContext, lam: np.ndarray) -> np.ndarray:
    return np.array([
        stationary_distribution(QueueParams(float(l), float(m), int(s), int(c)))[-1] if l > 0 else 0.0
        for l, m, s, c in zip(lam, ctx.service_rate, ctx.servers, ctx.capacity)
    ])


def sample_choices(probs: np.ndarray, rng_seed: int) -> np.ndarray:
    """One categorical draw per row; rows that are all zero stay unassigned."""
    probs = np.asarray(probs, dtype=float)
    out = np.zeros_like(probs, dtype=np.int8)
    if probs.size == 0:
        return out
    rng = np.random.default_rng(np.random.SeedSequence([rng_seed & 0xFFFFFFFFFFFFFFFF, SAMPLE_STREAM]))
    u = 1.0 - rng.random(probs.shape[0])  # (0, 1]: never lands on a zero-probability column
    cdf = np.cumsum(probs, axis=1)
    totals = cdf[:, -1]
    live = totals > 0
    pick = (cdf < (u * totals)[:, None]).sum(axis=1)
    pick = np.minimum(pick, probs.shape[1] - 1)
    rows = np.flatnonzero(live)
    out[rows, pick[rows]] = 1
    return out
