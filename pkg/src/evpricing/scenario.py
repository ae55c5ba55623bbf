"""World model: stations, EV population, demand profile and travel times.

A :class:`Scenario` is immutable once loaded. Every stochastic draw made from
it is keyed by ``(scenario.seed, hour, purpose)`` through
:class:`numpy.random.SeedSequence`, so parallel callers never share RNG state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .economics import EconParams


class ScenarioError(ValueError):
    """Raised when a scenario document is malformed or violates an invariant."""


class Level(str, Enum):
    L2 = "L2"
    L3 = "L3"


# stream tags for SeedSequence spawning
SPAWN_STREAM = 1
GUMBEL_STREAM = 2
SAMPLE_STREAM = 3


@dataclass(frozen=True)
class Station:
    id: int
    level: Level
    poles: int
    capacity: int
    service_rate: float
    power: float
    grid_price: tuple[float, ...]
    price_cap: tuple[float, ...]
    location: tuple[float, float]

    def __post_init__(self):
        if self.poles < 1:
            raise ScenarioError(f"station {self.id}: poles must be >= 1 (got {self.poles})")
        if self.capacity < self.poles:
            raise ScenarioError(
                f"station {self.id}: capacity must be >= poles ({self.capacity} < {self.poles})"
            )
        if not self.service_rate > 0:
            raise ScenarioError(f"station {self.id}: service_rate must be > 0")
        if not self.power > 0:
            raise ScenarioError(f"station {self.id}: power must be > 0")
        for t, (lo, hi) in enumerate(zip(self.grid_price, self.price_cap)):
            if lo < 0:
                raise ScenarioError(f"station {self.id}: grid_price[{t}] must be >= 0")
            if not hi > lo:
                raise ScenarioError(
                    f"station {self.id}: price_cap[{t}] must exceed grid_price[{t}] ({hi} <= {lo})"
                )


@dataclass(frozen=True)
class EvAgent:
    id: int
    initial_soc: float
    battery_capacity: float
    consumption_rate: float  # km/kWh
    age_years: float
    risk_aversion: float
    degradation_rate: float  # 1/year
    location: tuple[float, float]
    spawn_hour: int

    def __post_init__(self):
        if not 0.0 <= self.initial_soc <= 1.0:
            raise ScenarioError(f"ev {self.id}: initial_soc must lie in [0, 1]")
        if not 0.0 <= self.risk_aversion < 1.0:
            raise ScenarioError(f"ev {self.id}: risk_aversion must lie in [0, 1)")


@dataclass(frozen=True)
class DemandProfile:
    hourly_counts: tuple[int, ...]
    area: tuple[float, float, float, float] = (0.0, 0.0, 10.0, 10.0)
    hotspots: tuple[tuple[tuple[float, float], float], ...] = ()
    hotspot_radius_km: float = 1.0

    def __post_init__(self):
        if any(c < 0 for c in self.hourly_counts):
            raise ScenarioError("demand.hourly_counts must be non-negative")
        if sum(w for _, w in self.hotspots) > 1.0 + 1e-12:
            raise ScenarioError("demand.hotspots weights must sum to at most 1")


@dataclass(frozen=True)
class ChargingParams:
    """Curve coefficients and per-level charging targets."""

    l3_a: float = 2.096
    l3_b: float = 0.0749
    l3_c: float = 0.0552
    l2_rate: float = 1.0 / 225.0  # SOC per minute
    target_soc_l3: float = 0.9
    target_soc_l2: float = 1.0


@dataclass(frozen=True)
class EvDistributions:
    soc_range: tuple[float, float] = (0.1, 0.6)
    battery_capacity: float = 75.0
    consumption_rate: float = 5.0
    age_range: tuple[float, float] = (0.0, 8.0)
    risk_levels: tuple[float, ...] = (0.0, 0.05, 0.15)
    degradation_rate: float = 0.02
    charging: ChargingParams = field(default_factory=ChargingParams)

    def __post_init__(self):
        lo, hi = self.soc_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ScenarioError("ev_distributions.soc_range must satisfy 0 <= lo <= hi <= 1")
        if any(not 0.0 <= r < 1.0 for r in self.risk_levels) or not self.risk_levels:
            raise ScenarioError("ev_distributions.risk_levels must be non-empty values in [0, 1)")
        if self.battery_capacity <= 0 or self.consumption_rate <= 0:
            raise ScenarioError("ev_distributions.battery_capacity and consumption_rate must be > 0")
        ch = self.charging
        if not 0.0 < ch.target_soc_l3 < 1.0:
            raise ScenarioError("ev_distributions.charging.target_soc_l3 must lie in (0, 1)")
        if not 0.0 < ch.target_soc_l2 <= 1.0:
            raise ScenarioError("ev_distributions.charging.target_soc_l2 must lie in (0, 1]")


class TravelLookupError(KeyError):
    pass


@dataclass(frozen=True)
class TravelTimeProvider:
    """Travel times in hours.

    ``euclidean`` divides straight-line distance by ``speed``; ``matrix`` looks
    up a (station, grid cell) table, optionally per hour.
    """

    mode: str = "euclidean"
    speed: float = 30.0
    cell_size_km: float = 1.0
    table: dict[tuple[int, int], tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("euclidean", "matrix"):
            raise ScenarioError(f"travel.mode must be 'euclidean' or 'matrix' (got {self.mode!r})")
        if self.mode == "euclidean" and not self.speed > 0:
            raise ScenarioError("travel.speed must be > 0")
        for key, vals in self.table.items():
            if any(not (math.isfinite(v) and v >= 0) for v in vals):
                raise ScenarioError(f"travel.table entry {key} must be finite and >= 0")

    def cell_of(self, location: Sequence[float]) -> int:
        # row-major cells on a 1000-wide grid anchored at the origin
        col = int(math.floor(location[0] / self.cell_size_km))
        row = int(math.floor(location[1] / self.cell_size_km))
        return row * 1000 + col

    def hours(self, origin: Sequence[float], station: Station, hour: int = 0) -> float:
        if self.mode == "euclidean":
            dx = origin[0] - station.location[0]
            dy = origin[1] - station.location[1]
            return math.hypot(dx, dy) / self.speed
        key = (station.id, self.cell_of(origin))
        try:
            vals = self.table[key]
        except KeyError:
            raise TravelLookupError(f"no travel time for station {station.id}, cell {key[1]}") from None
        return vals[hour % len(vals)]


@dataclass(frozen=True)
class Scenario:
    stations: tuple[Station, ...]
    demand: DemandProfile
    ev_distributions: EvDistributions
    travel: TravelTimeProvider
    horizon_hours: int
    econ: EconParams
    seed: int
    choice: Any = None  # ChoiceConfig; typed loosely to avoid an import cycle
    cem: Any = None  # CemConfig

    def __post_init__(self):
        if not self.stations:
            raise ScenarioError("stations: at least one station is required")
        if self.horizon_hours < 1:
            raise ScenarioError("horizon_hours must be >= 1")
        if len(self.demand.hourly_counts) != self.horizon_hours:
            raise ScenarioError(
                f"demand.hourly_counts length {len(self.demand.hourly_counts)} "
                f"!= horizon_hours {self.horizon_hours}"
            )
        for s in self.stations:
            if len(s.grid_price) != self.horizon_hours or len(s.price_cap) != self.horizon_hours:
                raise ScenarioError(f"station {s.id}: per-hour price vectors must have horizon length")
        ids = [s.id for s in self.stations]
        if len(set(ids)) != len(ids):
            raise ScenarioError("stations: ids must be unique")

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    def seed_sequence(self, *key: int) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, *key])


def spawn_evs(scenario: Scenario, hour: int, rng_seed: int | None = None) -> list[EvAgent]:
    """Draw the EVs that request charging during ``hour``.

    ``rng_seed`` defaults to the scenario seed; the hour is always mixed in.
    """
    if not 0 <= hour < scenario.horizon_hours:
        raise ValueError(f"hour {hour} outside [0, {scenario.horizon_hours})")
    n = scenario.demand.hourly_counts[hour]
    if n == 0:
        return []
    seed = scenario.seed if rng_seed is None else rng_seed
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, SPAWN_STREAM, hour]))
    dist = scenario.ev_distributions
    soc = rng.uniform(dist.soc_range[0], dist.soc_range[1], n)
    age = rng.uniform(dist.age_range[0], dist.age_range[1], n)
    risk = rng.choice(np.asarray(dist.risk_levels, dtype=float), n)
    locs = _draw_locations(rng, scenario.demand, n)
    base_id = sum(scenario.demand.hourly_counts[:hour])
    return [
        EvAgent(
            id=base_id + k,
            initial_soc=float(soc[k]),
            battery_capacity=dist.battery_capacity,
            consumption_rate=dist.consumption_rate,
            age_years=float(age[k]),
            risk_aversion=float(risk[k]),
            degradation_rate=dist.degradation_rate,
            location=(float(locs[k, 0]), float(locs[k, 1])),
            spawn_hour=hour,
        )
        for k in range(n)
    ]


def _draw_locations(rng: np.random.Generator, demand: DemandProfile, n: int) -> np.ndarray:
    x0, y0, x1, y1 = demand.area
    out = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
    if demand.hotspots:
        weights = np.array([w for _, w in demand.hotspots] + [1.0 - sum(w for _, w in demand.hotspots)])
        weights = np.clip(weights, 0.0, None)
        pick = rng.choice(len(weights), size=n, p=weights / weights.sum())
        jitter = rng.normal(0.0, demand.hotspot_radius_km, (n, 2))
        for h, (center, _) in enumerate(demand.hotspots):
            mask = pick == h
            out[mask] = np.asarray(center) + jitter[mask]
        out[:, 0] = np.clip(out[:, 0], x0, x1)
        out[:, 1] = np.clip(out[:, 1], y0, y1)
    return out


def travel_time(provider: TravelTimeProvider, ev: EvAgent, station: Station, hour: int = 0) -> float:
    return provider.hours(ev.location, station, hour)


# ---------------------------------------------------------------------------
# loading


def _per_hour(value, horizon: int, what: str) -> tuple[float, ...]:
    if isinstance(value, (int, float)):
        return (float(value),) * horizon
    vals = tuple(float(v) for v in value)
    if len(vals) != horizon:
        raise ScenarioError(f"{what}: expected {horizon} hourly values, got {len(vals)}")
    return vals


TOP_LEVEL_KEYS = {"stations", "demand", "ev_distributions", "travel", "horizon_hours", "econ", "seed", "choice", "cem"}
STATION_KEYS = {"id", "level", "poles", "capacity", "service_rate", "power", "grid_price", "price_cap", "location"}
DEMAND_KEYS = {"hourly_counts", "area", "hotspots", "hotspot_radius_km"}


def _known(obj, keys: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise ScenarioError(f"{where} must be an object")
    unknown = set(obj) - keys
    if unknown:
        raise ScenarioError(f"{where}: unknown field(s) {sorted(unknown)}")


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ScenarioError(f"{where}: missing required field {key!r}")
    return obj[key]


def scenario_from_dict(doc: dict[str, Any]) -> Scenario:
    from .choice import ChoiceConfig
    from .optimizer import CemConfig

    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    _known(doc, TOP_LEVEL_KEYS, "scenario")
    horizon = int(_require(doc, "horizon_hours", "scenario"))
    if horizon < 1:
        raise ScenarioError("horizon_hours must be >= 1")

    econ = _build(EconParams, doc.get("econ", {}), "econ")

    stations = []
    for k, st in enumerate(_require(doc, "stations", "scenario")):
        where = f"stations[{k}]"
        _known(st, STATION_KEYS, where)
        try:
            level = Level(_require(st, "level", where))
        except ValueError:
            raise ScenarioError(f"{where}.level must be 'L2' or 'L3'") from None
        grid = _per_hour(st.get("grid_price", econ.price_floor), horizon, f"{where}.grid_price")
        cap = _per_hour(st.get("price_cap", econ.price_ceiling), horizon, f"{where}.price_cap")
        stations.append(
            Station(
                id=int(st.get("id", k)),
                level=level,
                poles=int(_require(st, "poles", where)),
                capacity=int(_require(st, "capacity", where)),
                service_rate=float(_require(st, "service_rate", where)),
                power=float(_require(st, "power", where)),
                grid_price=grid,
                price_cap=cap,
                location=tuple(float(v) for v in _require(st, "location", where)),
            )
        )

    stations.sort(key=lambda s: s.id)  # argmax ties resolve to the lowest id

    dem = _require(doc, "demand", "scenario")
    _known(dem, DEMAND_KEYS, "demand")
    demand = DemandProfile(
        hourly_counts=tuple(int(c) for c in _require(dem, "hourly_counts", "demand")),
        area=tuple(float(v) for v in dem.get("area", (0.0, 0.0, 10.0, 10.0))),
        hotspots=tuple(
            ((float(h["location"][0]), float(h["location"][1])), float(h["weight"]))
            for h in dem.get("hotspots", ())
        ),
        hotspot_radius_km=float(dem.get("hotspot_radius_km", 1.0)),
    )

    evd = dict(doc.get("ev_distributions", {}))
    charging = _build(ChargingParams, evd.pop("charging", {}), "ev_distributions.charging")
    for key in ("soc_range", "age_range", "risk_levels"):
        if key in evd:
            evd[key] = tuple(float(v) for v in evd[key])
    ev_distributions = _build(EvDistributions, {**evd, "charging": charging}, "ev_distributions")

    tr = dict(doc.get("travel", {"mode": "euclidean"}))
    if "table" in tr:
        tr["table"] = {
            (int(row["station"]), int(row["cell"])): _as_tuple(row["hours"]) for row in tr["table"]
        }
    travel = _build(TravelTimeProvider, tr, "travel")

    choice = _build(ChoiceConfig, doc.get("choice", {}), "choice")
    cem = _build(CemConfig, doc.get("cem", {}), "cem")
    if cem.population * cem.elite_ratio < 2:
        raise ScenarioError("cem: population * elite_ratio must be >= 2")

    return Scenario(
        stations=tuple(stations),
        demand=demand,
        ev_distributions=ev_distributions,
        travel=travel,
        horizon_hours=horizon,
        econ=econ,
        seed=int(doc.get("seed", 0)),
        choice=choice,
        cem=cem,
    )


def _as_tuple(v) -> tuple[float, ...]:
    if isinstance(v, (int, float)):
        return (float(v),)
    return tuple(float(x) for x in v)


def _build(cls, block: dict[str, Any], where: str):
    if not isinstance(block, dict):
        raise ScenarioError(f"{where} must be an object")
    known = set(cls.__dataclass_fields__)
    unknown = set(block) - known
    if unknown:
        raise ScenarioError(f"{where}: unknown field(s) {sorted(unknown)}")
    try:
        return cls(**block)
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def load_scenario(path: str | Path) -> Scenario:
    """Parse and validate a scenario JSON file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return scenario_from_dict(doc)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package (``desk`` or ``clayton_synthetic``)."""
    base = Path(__file__).with_name("data")
    p = base / (name if name.endswith(".json") else f"{name}.json")
    if not p.exists():
        raise FileNotFoundError(p)
    return p
