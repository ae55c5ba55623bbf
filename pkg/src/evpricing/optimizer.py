"""Leader problem: sensitivity-guided cross-entropy search over station-hour prices.

The search maximises a batch objective ``F(X) -> scores`` where each row of
``X`` is a price vector. Every ``psa_frequency``-th iteration the influence of
each coordinate on the score distribution is measured by freezing it at its
elite mean and comparing the two Gaussian fits of the scores by relative
entropy; only coordinates above ``psa_threshold`` are updated that iteration.

The rolling-horizon driver optimises one window at a time and carries
still-charging vehicles into later windows as occupied poles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import economics
from .choice import ChoiceConfig, ChoiceEquilibrium, HourContext, equilibrium, hour_context, solve_batch
from .economics import EconParams, PriceSchedule, UtilityBreakdown, price_bounds
from .scenario import Scenario

Objective = Callable[[np.ndarray], np.ndarray]

# rows per kernel call; bounds the (rows, n_ev, n_station) probability tensor
_CHUNK_ROWS = 2048


@dataclass(frozen=True)
class CemConfig:
    population: int = 1000
    elite_ratio: float = 0.05
    smoothing: float = 0.7  # weight kept on the previous distribution
    tolerance: float = 1e-3
    max_iters: int = 100
    psa_threshold: float = 1e-3
    psa_frequency: int = 5
    psa_mode: str = "exact"  # or "cached"
    seed: int = 0
    sigma_min: float = 0.005
    sigma_max: float | None = None  # default: (cap - floor) / 4
    window_hours: int = 1
    warm_start: bool = False
    threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.elite_ratio < 1.0:
            raise ValueError("elite_ratio must lie in (0, 1)")
        if not 0.0 <= self.smoothing <= 1.0:
            raise ValueError("smoothing must lie in [0, 1]")
        if self.population < 1 or self.max_iters < 1:
            raise ValueError("population and max_iters must be >= 1")
        if self.psa_frequency < 0:
            raise ValueError("psa_frequency must be >= 0 (0 disables sensitivity analysis)")
        if self.psa_mode not in ("exact", "cached"):
            raise ValueError("psa_mode must be 'exact' or 'cached'")
        if not self.sigma_min > 0:
            raise ValueError("sigma_min must be > 0")
        if self.sigma_max is not None and self.sigma_max < self.sigma_min:
            raise ValueError("sigma_max must be >= sigma_min")
        if self.window_hours < 1:
            raise ValueError("window_hours must be >= 1")

    @property
    def n_elite(self) -> int:
        return max(1, math.ceil(self.elite_ratio * self.population - 1e-9))


@dataclass(frozen=True)
class SamplingDistribution:
    mean: np.ndarray
    std: np.ndarray
    sigma_min: float
    sigma_max: float

    def __post_init__(self):
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std must have the same shape")


@dataclass(frozen=True)
class EliteSet:
    samples: np.ndarray
    scores: np.ndarray
    threshold: float
    elite_mean: np.ndarray
    elite_std: np.ndarray
    indices: np.ndarray


@dataclass(frozen=True)
class SensitivityReport:
    indices: np.ndarray
    active_set: frozenset
    unconditional_fit: tuple[float, float]
    conditional_fits: list[tuple[float, float]]


@dataclass(frozen=True)
class TraceRow:
    window: int
    iteration: int
    best: float
    mean: float
    elite_min: float
    elite_max: float
    mean_sigma: float
    active_count: int


@dataclass
class CemResult:
    best_x: np.ndarray
    best_score: float
    trace: list[TraceRow]
    converged: bool
    distribution: SamplingDistribution
    sensitivity: list[SensitivityReport] = field(default_factory=list)


# ---------------------------------------------------------------------------
# primitives


def gaussian_kl(p: tuple[float, float], q: tuple[float, float]) -> float:
    """KL(p || q) for univariate normals given as (mean, std), in nats."""
    mp, sp = p
    mq, sq = q
    if not (sp > 0 and sq > 0):
        raise ValueError("standard deviations must be > 0")
    return math.log(sq / sp) + (sp * sp + (mp - mq) ** 2) / (2.0 * sq * sq) - 0.5


def cem_sample(dist: SamplingDistribution, n: int, bounds: tuple[np.ndarray, np.ndarray], rng_seed) -> np.ndarray:
    """``n`` independent Gaussian draws per coordinate, clipped into ``bounds``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    lo, hi = bounds
    x = dist.mean[None, :] + dist.std[None, :] * rng.standard_normal((n, dist.mean.size))
    return np.clip(x, lo, hi)


def elite_select(samples: np.ndarray, scores: np.ndarray, elite_ratio: float) -> EliteSet:
    """Top ``ceil(elite_ratio * N)`` samples by score; ties go to the lower index.

    Equivalently, on the minimisation form ``G = -F`` the threshold is the
    ``ceil(elite_ratio * N)``-th smallest ``G``.
    """
    samples = np.asarray(samples, dtype=float)
    scores = np.asarray(scores, dtype=float)
    n = len(scores)
    if samples.shape[0] != n:
        raise ValueError("samples and scores differ in length")
    k = max(1, math.ceil(elite_ratio * n - 1e-9))
    order = np.lexsort((np.arange(n), -scores))[:k]
    elite = samples[order]
    return EliteSet(
        samples=elite,
        scores=scores[order],
        threshold=float(scores[order[-1]]),
        elite_mean=elite.mean(axis=0),
        elite_std=elite.std(axis=0),
        indices=order,
    )


def cem_update(dist: SamplingDistribution, elites: EliteSet, active, smoothing: float) -> SamplingDistribution:
    """Smoothed refit of the active coordinates; frozen ones are left untouched."""
    mask = np.zeros(dist.mean.size, dtype=bool)
    mask[list(active)] = True
    mean = np.where(mask, smoothing * dist.mean + (1.0 - smoothing) * elites.elite_mean, dist.mean)
    std = np.where(mask, smoothing * dist.std + (1.0 - smoothing) * elites.elite_std, dist.std)
    std = np.where(mask, np.clip(std, dist.sigma_min, dist.sigma_max), dist.std)
    return SamplingDistribution(mean, std, dist.sigma_min, dist.sigma_max)


def _fit(scores: np.ndarray) -> tuple[float, float]:
    return float(np.mean(scores)), float(np.std(scores))


def psa_indices(
    samples: np.ndarray,
    scores: np.ndarray,
    elites: EliteSet,
    objective: Objective | None,
    threshold: float,
    frozen_scores: Callable[[int, float], np.ndarray] | None = None,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
) -> SensitivityReport:
    """Relative-entropy sensitivity of the score distribution to each coordinate.

    For coordinate ``k`` the population is re-scored with ``x_k`` pinned at the
    elite mean. ``frozen_scores(k, value)`` may supply those scores directly
    (e.g. from cached equilibria); otherwise ``objective`` is called once on the
    stacked frozen populations.
    """
    samples = np.asarray(samples, dtype=float)
    n, d = samples.shape
    if n < 2:
        raise ValueError("need at least 2 samples")
    pinned = elites.elite_mean
    if bounds is not None:
        # a mean of values sitting on a bound can round just outside it
        pinned = np.clip(pinned, bounds[0], bounds[1])
    base = _fit(scores)
    if base[1] == 0.0:
        return SensitivityReport(np.zeros(d), frozenset(), base, [base] * d)

    if frozen_scores is not None:
        cond_scores = [np.asarray(frozen_scores(k, float(pinned[k]))) for k in range(d)]
    else:
        stacked = np.repeat(samples[None], d, axis=0)
        stacked[np.arange(d), :, np.arange(d)] = pinned[:, None]
        flat = np.asarray(objective(stacked.reshape(d * n, d)))
        cond_scores = list(flat.reshape(d, n))

    fits, idx = [], np.zeros(d)
    # a frozen population with no spread left is maximally informative; floor keeps KL finite
    floor = base[1] * 1e-6
    for k, sc in enumerate(cond_scores):
        m, s = _fit(sc)
        fits.append((m, s))
        idx[k] = max(0.0, gaussian_kl((m, max(s, floor)), base))
    active = frozenset(int(k) for k in np.flatnonzero(idx > threshold))
    return SensitivityReport(idx, active, base, fits)


def relative_spread(elite_scores: np.ndarray) -> float:
    hi, lo = float(np.max(elite_scores)), float(np.min(elite_scores))
    scale = max(abs(hi), abs(lo))
    return 0.0 if scale == 0.0 else (hi - lo) / scale


def maximize(
    objective: Objective,
    lower,
    upper,
    config: CemConfig,
    mean0=None,
    std0=None,
    window: int = 0,
    frozen_scores_factory=None,
) -> CemResult:
    """Cross-entropy maximisation of ``objective`` over the box ``[lower, upper]``.

    ``frozen_scores_factory(samples, scores)``, if given, returns a callable for
    cheap frozen-population scoring (see :func:`psa_indices`).
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    d = lower.size
    smax = config.sigma_max if config.sigma_max is not None else float(np.max(upper - lower)) / 4.0
    smax = max(smax, config.sigma_min)
    mean = (lower + upper) / 2.0 if mean0 is None else np.clip(np.asarray(mean0, dtype=float), lower, upper)
    std = np.full(d, smax) if std0 is None else np.clip(np.asarray(std0, dtype=float), config.sigma_min, smax)
    dist = SamplingDistribution(mean, std, config.sigma_min, smax)

    best_x, best_f = mean.copy(), -math.inf
    trace: list[TraceRow] = []
    reports: list[SensitivityReport] = []
    stable = 0
    converged = False
    everything = range(d)
    for it in range(config.max_iters):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed & 0xFFFFFFFFFFFFFFFF, window, it]))
        X = cem_sample(dist, config.population, (lower, upper), rng)
        F = np.asarray(objective(X), dtype=float)
        top = int(np.argmax(F))
        if F[top] > best_f:
            best_f, best_x = float(F[top]), X[top].copy()
        elites = elite_select(X, F, config.elite_ratio)

        active = everything
        if config.psa_frequency and it % config.psa_frequency == 0 and config.population >= 2:
            fs = frozen_scores_factory(X, F) if frozen_scores_factory is not None else None
            rep = psa_indices(X, F, elites, objective, config.psa_threshold, fs, bounds=(lower, upper))
            reports.append(rep)
            active = sorted(rep.active_set)
        dist = cem_update(dist, elites, active, config.smoothing)

        trace.append(TraceRow(
            window=window, iteration=it, best=best_f, mean=float(F.mean()),
            elite_min=float(elites.scores.min()), elite_max=float(elites.scores.max()),
            mean_sigma=float(dist.std.mean()), active_count=len(active),
        ))
        # a single elite has no spread to measure, so it never counts as settled
        settled = elites.scores.size >= 2 and relative_spread(elites.scores) < config.tolerance
        stable = stable + 1 if settled else 0
        if stable >= 2:
            converged = True
            break
    return CemResult(best_x, best_f, trace, converged, dist, reports)


# ---------------------------------------------------------------------------
# pricing objective


@dataclass
class PriceAudit:
    """Extremes of every price handed to the follower model, relative to its bounds."""

    evaluated: int = 0
    worst_below: float = 0.0  # max(lower - price), <= 0 when feasible
    worst_above: float = 0.0  # max(price - upper)

    def record(self, prices: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> None:
        if prices.size == 0:
            return
        self.evaluated += prices.shape[0]
        self.worst_below = max(self.worst_below, float(np.max(lower - prices)))
        self.worst_above = max(self.worst_above, float(np.max(prices - upper)))

    @property
    def feasible(self) -> bool:
        return self.worst_below <= 0.0 and self.worst_above <= 0.0


class PriceBoundViolation(AssertionError):
    pass


@dataclass
class WindowContext:
    """Hours ``start .. start + len(hours) - 1`` with their carried pole occupancy."""

    start: int
    hours: list[HourContext]
    econ: EconParams
    choice: ChoiceConfig
    threads: int = 1
    audit: PriceAudit = field(default_factory=PriceAudit)
    backend: Callable | None = None

    @property
    def n_stations(self) -> int:
        return len(self.hours[0].station_ids)

    @property
    def n_hours(self) -> int:
        return len(self.hours)

    @property
    def dim(self) -> int:
        return self.n_stations * self.n_hours

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.stack([h.lower for h in self.hours], axis=1).reshape(-1)
        hi = np.stack([h.upper for h in self.hours], axis=1).reshape(-1)
        return lo, hi

    def hour_prices(self, X: np.ndarray, h: int) -> np.ndarray:
        # decision vectors are station-major: index = station * n_hours + hour
        return X.reshape(X.shape[0], self.n_stations, self.n_hours)[:, :, h]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.scores(X)[0]

    def scores(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Performance index per row plus energy-weighted arrivals ``(N, dim)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lo, hi = self.bounds()
        self.audit.record(X, lo, hi)
        if not self.audit.feasible:
            raise PriceBoundViolation(
                f"price outside bounds (below by {self.audit.worst_below}, above by {self.audit.worst_above})"
            )
        n = X.shape[0]
        total = np.zeros(n)
        energy_flow = np.zeros((n, self.n_stations, self.n_hours))
        econ = self.econ
        for h, ctx in enumerate(self.hours):
            if ctx.n_ev == 0:
                continue
            P = self.hour_prices(X, h)
            for a in range(0, n, _CHUNK_ROWS):
                b = min(n, a + _CHUNK_ROWS)
                eq = solve_batch(ctx, P[a:b], self.choice, threads=self.threads, backend=self.backend)
                flow = np.einsum("nes,es->ns", eq.probs, ctx.energy)
                pay = (flow * P[a:b]).sum(axis=1)
                rev = pay - (flow * ctx.grid_price[None, :]).sum(axis=1)
                wait_loss = econ.vot * (eq.arrival_rates * eq.waits).sum(axis=1)
                rejections = eq.rejected.sum(axis=1) + ctx.unserved
                util = econ.kappa * flow.sum(axis=1) - pay - wait_loss - econ.rejection_penalty * rejections
                total[a:b] += econ.omega * rev + (1.0 - econ.omega) * util
                energy_flow[a:b, :, h] = flow
        return total, energy_flow.reshape(n, -1)

    def cached_frozen_scores(self, X: np.ndarray, F: np.ndarray, flow: np.ndarray):
        """Frozen-population scores with every sample's choices held fixed.

        With choices fixed the index is linear in each price with slope
        ``(2 * omega - 1) * energy_flow``.
        """
        slope = 2.0 * self.econ.omega - 1.0

        def frozen(k: int, value: float) -> np.ndarray:
            return F + slope * flow[:, k] * (value - X[:, k])

        return frozen


def evaluate(theta, window: WindowContext) -> float:
    """Performance index of one price vector for the window."""
    return float(window(np.asarray(theta, dtype=float)[None, :])[0])


@dataclass(frozen=True)
class HourOutcome:
    hour: int
    prices: np.ndarray
    equilibrium: ChoiceEquilibrium
    breakdown: UtilityBreakdown
    n_ev: int
    occupied: np.ndarray


def simulate_hour(ctx: HourContext, prices: np.ndarray, econ: EconParams, choice: ChoiceConfig,
                  occupied: np.ndarray | None = None, backend=None) -> HourOutcome:
    eq = equilibrium(ctx, prices, choice, backend=backend)
    if ctx.n_ev:
        bd = economics.breakdown(eq, ctx.energy, prices, ctx.grid_price, econ)
    else:
        bd = UtilityBreakdown(0.0, np.zeros(0), 0.0, 0.0, 0.0, econ.omega)
    occ = np.zeros(len(ctx.station_ids), dtype=np.int64) if occupied is None else np.asarray(occupied)
    return HourOutcome(ctx.hour, np.asarray(prices, dtype=float), eq, bd, ctx.n_ev, occ)


@dataclass
class WindowResult:
    start: int
    best_prices: np.ndarray  # (n_stations, n_hours)
    best_score: float
    trace: list[TraceRow]
    converged: bool
    outcomes: list[HourOutcome]
    sensitivity: list[SensitivityReport] = field(default_factory=list)
    final_mean: np.ndarray | None = None

    @property
    def equilibrium(self) -> ChoiceEquilibrium:
        return self.outcomes[0].equilibrium


def optimize_window(window: WindowContext, config: CemConfig, mean0=None) -> WindowResult:
    lo, hi = window.bounds()
    if all(ctx.n_ev == 0 for ctx in window.hours):
        # nothing to price: every vector scores 0, report the floor
        x = lo.copy()
        F = window(x[None, :])[0]
        row = TraceRow(window.start, 0, float(F), float(F), float(F), float(F), 0.0, 0)
        res = CemResult(x, float(F), [row], True, SamplingDistribution(x, np.zeros_like(x), config.sigma_min, config.sigma_min))
    else:
        cache: dict = {}

        def objective(X):
            F, flow = window.scores(X)
            cache["last"] = (X, F, flow)
            return F

        def cached(X, F):
            Xc, Fc, flow = cache["last"]
            return window.cached_frozen_scores(Xc, Fc, flow)

        factory = cached if config.psa_mode == "cached" else None

        res = maximize(objective, lo, hi, config, mean0=mean0, window=window.start, frozen_scores_factory=factory)
    prices = res.best_x.reshape(window.n_stations, window.n_hours)
    outcomes = [
        simulate_hour(ctx, prices[:, h], window.econ, window.choice, backend=window.backend)
        for h, ctx in enumerate(window.hours)
    ]
    return WindowResult(
        start=window.start,
        best_prices=prices,
        best_score=res.best_score,
        trace=res.trace,
        converged=res.converged,
        outcomes=outcomes,
        sensitivity=res.sensitivity,
        final_mean=res.distribution.mean,
    )


# ---------------------------------------------------------------------------
# rolling horizon


def carried_occupancy(ctx: HourContext, eq: ChoiceEquilibrium, horizon: int) -> np.ndarray:
    """Expected vehicles still holding a pole at the start of each later hour.

    Arrivals are spread uniformly over the hour; an admitted vehicle leaves
    after its wait plus charging time. Returns ``(n_stations, horizon)``.
    """
    S = len(ctx.station_ids)
    out = np.zeros((S, horizon))
    if ctx.n_ev == 0:
        return out
    admitted = eq.probs * (1.0 - eq.rejection_prob)[None, :]
    stay = eq.waits[None, :] + ctx.duration  # hours after arrival
    k = 1
    while ctx.hour + k < horizon:
        # P(u + stay > k) for u ~ U[0, 1)
        frac = np.clip(stay - k + 1.0, 0.0, 1.0)
        occ = (admitted * frac).sum(axis=0)
        if not occ.any():
            break
        out[:, ctx.hour + k] = occ
        k += 1
    return out


def held_poles(expected: np.ndarray) -> np.ndarray:
    return np.floor(expected + 0.5).astype(np.int64)


@dataclass
class HorizonResult:
    schedule: PriceSchedule
    outcomes: list[HourOutcome]
    windows: list[WindowResult]
    audit: PriceAudit

    @property
    def non_converged(self) -> list[int]:
        return [w.start for w in self.windows if not w.converged]

    @property
    def trace(self) -> list[TraceRow]:
        return [row for w in self.windows for row in w.trace]


def _settings(scenario: Scenario, choice: ChoiceConfig | None, config: CemConfig | None):
    choice = choice or scenario.choice or ChoiceConfig()
    config = config or scenario.cem or CemConfig()
    return choice, config


def rolling_horizon(
    scenario: Scenario,
    config: CemConfig | None = None,
    choice: ChoiceConfig | None = None,
    econ: EconParams | None = None,
    backend=None,
    progress: Callable[[WindowResult], None] | None = None,
) -> HorizonResult:
    """Optimise prices window by window over the whole horizon."""
    choice, config = _settings(scenario, choice, config)
    econ = econ or scenario.econ
    if econ != scenario.econ:
        scenario = replace(scenario, econ=econ)
    price_bounds(scenario)  # fail early on an empty feasible band
    T, S, H = scenario.horizon_hours, scenario.n_stations, config.window_hours
    occupancy = np.zeros((S, T))
    prices = np.zeros((S, T))
    audit = PriceAudit()
    windows: list[WindowResult] = []
    outcomes: list[HourOutcome] = []
    mean0 = None
    for start in range(0, T, H):
        hours = list(range(start, min(T, start + H)))
        held = {h: held_poles(occupancy[:, h]) for h in hours}
        ctxs = [hour_context(scenario, h, choice, occupied=held[h]) for h in hours]
        window = WindowContext(start, ctxs, econ, choice, threads=config.threads, audit=audit, backend=backend)
        warm = mean0 if (config.warm_start and mean0 is not None and mean0.size == window.dim) else None
        res = optimize_window(window, config, mean0=warm)
        mean0 = res.final_mean
        for h, ctx, out in zip(hours, ctxs, res.outcomes):
            prices[:, h] = out.prices
            out = replace(out, occupied=held[h])
            outcomes.append(out)
            occupancy += carried_occupancy(ctx, out.equilibrium, T)
        res.outcomes = outcomes[-len(hours):]
        windows.append(res)
        if progress is not None:
            progress(res)
    return HorizonResult(PriceSchedule(prices), outcomes, windows, audit)


def simulate_schedule(
    scenario: Scenario,
    schedule: PriceSchedule,
    choice: ChoiceConfig | None = None,
    econ: EconParams | None = None,
    backend=None,
) -> HorizonResult:
    """Play a fixed price schedule through the follower model hour by hour."""
    choice = choice or scenario.choice or ChoiceConfig()
    econ = econ or scenario.econ
    T, S = scenario.horizon_hours, scenario.n_stations
    P = np.asarray(schedule.prices, dtype=float)
    if P.shape != (S, T):
        raise ValueError(f"schedule shape {P.shape} != ({S}, {T})")
    if econ != scenario.econ:
        scenario = replace(scenario, econ=econ)
    lo, hi = price_bounds(scenario)
    audit = PriceAudit()
    audit.record(P.T, lo.T, hi.T)
    if not audit.feasible:
        raise PriceBoundViolation("schedule violates the price bounds")
    occupancy = np.zeros((S, T))
    outcomes = []
    for h in range(T):
        held = held_poles(occupancy[:, h])
        ctx = hour_context(scenario, h, choice, occupied=held)
        out = simulate_hour(ctx, P[:, h], econ, choice, occupied=held, backend=backend)
        outcomes.append(out)
        occupancy += carried_occupancy(ctx, out.equilibrium, T)
    return HorizonResult(schedule, outcomes, [], audit)


def totals(outcomes: Sequence[HourOutcome]) -> dict[str, float]:
    return {
        "total_ev_utility": float(sum(o.breakdown.ev_utility_total for o in outcomes)),
        "total_cs_revenue": float(sum(o.breakdown.cs_revenue for o in outcomes)),
        "total_queue_penalty": float(sum(o.breakdown.queue_penalty for o in outcomes)),
        "total_PI": float(sum(o.breakdown.performance_index for o in outcomes)),
    }
