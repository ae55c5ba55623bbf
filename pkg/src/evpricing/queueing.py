"""Stationary M/M/s/c analysis for a single charging station."""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QueueParams:
    arrival_rate: float
    service_rate: float
    servers: int
    capacity: int

    def __post_init__(self):
        if self.arrival_rate < 0:
            raise ValueError("arrival_rate must be >= 0")
        if not self.service_rate > 0:
            raise ValueError("service_rate must be > 0")
        if self.servers < 1 or self.capacity < self.servers:
            raise ValueError(f"need 1 <= servers <= capacity (got {self.servers}, {self.capacity})")


@dataclass(frozen=True)
class QueueMetrics:
    state_probs: np.ndarray
    queue_length: float
    wait_hours: float
    rejection_prob: float
    rejected_rate: float


def stationary_distribution(p: QueueParams) -> np.ndarray:
    """Probabilities of 0..capacity vehicles in the system.

    Built from running products of birth/death ratios so that large
    capacities do not overflow the factorial form.
    """
    lam, mu, s, c = p.arrival_rate, p.service_rate, p.servers, p.capacity
    if lam == 0.0:
        out = np.zeros(c + 1)
        out[0] = 1.0
        return out
    d = np.arange(1, c + 1)
    ratios = lam / (np.minimum(d, s) * mu)
    # normalise in log space: the unnormalised tail can be astronomically large
    logw = np.concatenate(([0.0], np.cumsum(np.log(ratios))))
    w = np.exp(logw - logw.max())
    return w / w.sum()


def expected_queue_length(p: QueueParams) -> float:
    if p.capacity == p.servers:
        return 0.0
    pi = stationary_distribution(p)
    extra = np.arange(p.servers + 1, p.capacity + 1) - p.servers
    return float(np.dot(extra, pi[p.servers + 1 :]))


def expected_wait(p: QueueParams) -> float:
    """Mean wait of admitted vehicles in hours, via Little's law."""
    if p.arrival_rate == 0.0:
        return 0.0
    pi = stationary_distribution(p)
    throughput = p.arrival_rate * (1.0 - pi[-1])
    if throughput <= 0.0:
        return 0.0
    return expected_queue_length(p) / throughput


def rejected_rate(p: QueueParams) -> float:
    if p.arrival_rate == 0.0:
        return 0.0
    return float(p.arrival_rate * stationary_distribution(p)[-1])


def queue_metrics(p: QueueParams) -> QueueMetrics:
    pi = stationary_distribution(p)
    return QueueMetrics(
        state_probs=pi,
        queue_length=expected_queue_length(p),
        wait_hours=expected_wait(p),
        rejection_prob=float(pi[-1]),
        rejected_rate=rejected_rate(p),
    )


@dataclass(frozen=True)
class SimulatedQueue:
    state_probs: np.ndarray
    wait_hours: float
    rejection_prob: float
    events: int


def simulate_mmsc(p: QueueParams, n_events: int = 1_000_000, seed: int = 0, warmup: float = 0.01) -> SimulatedQueue:
    """First-come-first-served event simulation of the same queue.

    The first ``warmup`` fraction of events is discarded. Rejection
    probability is the blocked fraction of arrivals (PASTA).
    """
    lam, mu, s, c = p.arrival_rate, p.service_rate, p.servers, p.capacity
    if lam == 0.0:
        probs = np.zeros(c + 1)
        probs[0] = 1.0
        return SimulatedQueue(probs, 0.0, 0.0, 0)
    rng = np.random.default_rng(seed)
    inter = iter(rng.exponential(1.0 / lam, n_events + 1).tolist())
    service = iter(rng.exponential(1.0 / mu, n_events + 1).tolist())

    t = 0.0
    next_arrival = next(inter)
    departures: list[float] = []
    waiting: deque[float] = deque()
    n = 0
    area = np.zeros(c + 1)
    last = 0.0
    burn = int(n_events * warmup)
    arrivals = blocked = served = 0
    wait_sum = 0.0

    for k in range(n_events):
        counting = k >= burn
        if departures and departures[0] < next_arrival:
            t = heapq.heappop(departures)
            if counting:
                area[n] += t - last
            last = t
            n -= 1
            if waiting:
                arrived = waiting.popleft()
                if counting:
                    wait_sum += t - arrived
                    served += 1
                heapq.heappush(departures, t + next(service))
        else:
            t = next_arrival
            if counting:
                area[n] += t - last
                arrivals += 1
            last = t
            next_arrival = t + next(inter)
            if n == c:
                blocked += counting
                continue
            n += 1
            if len(departures) < s:
                if counting:
                    served += 1
                heapq.heappush(departures, t + next(service))
            else:
                waiting.append(t)
    probs = area / area.sum()
    return SimulatedQueue(
        state_probs=probs,
        wait_hours=wait_sum / served if served else 0.0,
        rejection_prob=blocked / arrivals if arrivals else 0.0,
        events=n_events,
    )
