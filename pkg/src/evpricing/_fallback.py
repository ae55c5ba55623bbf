"""Pure numpy implementation of the batched choice-equilibrium kernel.

Mirrors ``_kernels.pyx`` exactly; used when the extension is unavailable or
``EVPRICING_PURE_PYTHON`` is set.
"""

import numpy as np

MODE_DC = 0
MODE_STANDARD = 1
MODE_MSA = 2


def queue_batch(lam, mu, servers, capacity):
    """Expected wait and full-system probability for every (sample, station).

    lam: (N, S); mu, servers, capacity: (S,). Returns (wait, pi_full), both (N, S).
    """
    lam = np.asarray(lam, dtype=float)
    cmax = int(capacity.max())
    d = np.arange(1, cmax + 1)
    denom = np.minimum(d[None, :], servers[:, None]) * mu[:, None]  # (S, cmax)
    valid = d[None, :] <= capacity[:, None]
    with np.errstate(divide="ignore"):
        loglam = np.log(lam)  # -inf where lam == 0
    steps = loglam[..., None] - np.log(denom)[None]
    steps = np.where(valid[None], steps, -np.inf)
    logw = np.concatenate([np.zeros(lam.shape + (1,)), np.cumsum(steps, axis=-1)], axis=-1)
    # cumsum of -inf stays -inf; nan cannot arise because steps are never +inf
    top = logw.max(axis=-1, keepdims=True)
    w = np.exp(logw - top)
    pi = w / w.sum(axis=-1, keepdims=True)

    states = np.arange(cmax + 1)
    extra = np.clip(states[None, :] - servers[:, None], 0, None)  # (S, cmax+1)
    qlen = (pi * extra[None]).sum(axis=-1)
    pi_full = np.take_along_axis(pi, np.broadcast_to(capacity[None, :, None], lam.shape + (1,)), axis=-1)[..., 0]
    thr = lam * (1.0 - pi_full)
    wait = np.divide(qlen, thr, out=np.zeros_like(qlen), where=thr > 0)
    pi_full = np.where(lam > 0, pi_full, 0.0)
    return wait, pi_full


def _probabilities(prices, eca, base_cost, eps, wait, servers, power, theta, mode, cost_floor):
    """One pass of the choice model. prices, wait: (N, S). Returns (N, E, S)."""
    cost = np.maximum(base_cost[None] + wait[:, None, :], cost_floor)
    attr = (servers * power)[None, None, :] / (prices[:, None, :] * cost * cost)
    n, e, s = attr.shape
    if e == 0:
        return np.zeros((n, 0, s))
    mask = eca[None].astype(bool)
    if mode == MODE_DC:
        masked = np.where(mask, attr, -np.inf)
        pick = masked.argmax(axis=-1)  # first maximum = lowest station index
        out = np.zeros_like(attr)
        np.put_along_axis(out, pick[..., None], 1.0, axis=-1)
        return out * mask.any(axis=-1, keepdims=True)
    util = np.where(mask, theta * attr + eps[None], -np.inf)
    top = util.max(axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    w = np.exp(util - top)
    tot = w.sum(axis=-1, keepdims=True)
    return np.divide(w, tot, out=np.zeros_like(w), where=tot > 0)


def equilibrium_batch(prices, eca, base_cost, eps, servers, capacity, mu, power,
                      theta, mode, max_iters, tol, cost_floor):
    prices = np.ascontiguousarray(prices, dtype=float)
    n, s = prices.shape
    servers_f = servers.astype(float)
    zero = np.zeros((n, s))
    p = _probabilities(prices, eca, base_cost, eps, zero, servers_f, power, theta, mode, cost_floor)
    iters = np.zeros(n, dtype=np.int64)
    converged = np.ones(n, dtype=np.uint8)
    if mode == MODE_MSA:
        converged[:] = 0
        active = np.ones(n, dtype=bool)
        for it in range(max_iters):
            if not active.any():
                break
            idx = np.flatnonzero(active)
            lam = p[idx].sum(axis=1)
            wait, _ = queue_batch(lam, mu, servers, capacity)
            phat = _probabilities(prices[idx], eca, base_cost, eps, wait, servers_f, power, theta, mode, cost_floor)
            step = (phat - p[idx]) * (1.0 / (it + 1))
            p[idx] += step
            iters[idx] = it + 1
            delta = np.abs(step).reshape(len(idx), -1).max(axis=1) if step.size else np.zeros(len(idx))
            done = delta < tol
            converged[idx[done]] = 1
            active[idx[done]] = False
    lam = p.sum(axis=1)
    wait, pi_full = queue_batch(lam, mu, servers, capacity)
    return p, lam, wait, pi_full, iters, converged
