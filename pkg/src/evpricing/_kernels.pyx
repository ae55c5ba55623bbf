# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batched choice-equilibrium kernel.

Same contract as ``_fallback.equilibrium_batch``. The per-sample loop runs
without the GIL so callers can split a population across threads.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, INFINITY

cnp.import_array()

DEF MODE_DC = 0
DEF MODE_MSA = 2


cdef void _queue(double lam, double mu, long s, long c, double* logw,
                 double* wait_out, double* full_out) noexcept nogil:
    cdef long d
    cdef double top, tot, qlen, pi, thr, step_den
    if lam <= 0.0:
        wait_out[0] = 0.0
        full_out[0] = 0.0
        return
    logw[0] = 0.0
    top = 0.0
    for d in range(1, c + 1):
        step_den = (d if d < s else s) * mu
        logw[d] = logw[d - 1] + log(lam) - log(step_den)
        if logw[d] > top:
            top = logw[d]
    tot = 0.0
    for d in range(c + 1):
        logw[d] = exp(logw[d] - top)
        tot += logw[d]
    qlen = 0.0
    for d in range(s + 1, c + 1):
        qlen += (d - s) * (logw[d] / tot)
    pi = logw[c] / tot
    thr = lam * (1.0 - pi)
    wait_out[0] = qlen / thr if thr > 0.0 else 0.0
    full_out[0] = pi


cdef void _probs(const double[::1] price, const unsigned char[:, ::1] eca,
                 const double[:, ::1] base_cost, const double[:, ::1] eps,
                 const double* wait, const double* weight,
                 double theta, int mode, double cost_floor,
                 double[:, ::1] out, double* util) noexcept nogil:
    cdef Py_ssize_t E = eca.shape[0], S = eca.shape[1], e, i, best
    cdef double cost, attr, top, tot, bestv
    for e in range(E):
        top = -INFINITY
        best = -1
        bestv = -INFINITY
        for i in range(S):
            out[e, i] = 0.0
            if not eca[e, i]:
                continue
            cost = base_cost[e, i] + wait[i]
            if cost < cost_floor:
                cost = cost_floor
            attr = weight[i] / (price[i] * cost * cost)
            if mode == MODE_DC:
                if attr > bestv:
                    bestv = attr
                    best = i
            else:
                util[i] = theta * attr + eps[e, i]
                if util[i] > top:
                    top = util[i]
        if mode == MODE_DC:
            if best >= 0:
                out[e, best] = 1.0
            continue
        if top == -INFINITY:
            continue
        tot = 0.0
        for i in range(S):
            if eca[e, i]:
                out[e, i] = exp(util[i] - top)
                tot += out[e, i]
        for i in range(S):
            out[e, i] /= tot


def equilibrium_batch(prices, eca, base_cost, eps, servers, capacity, mu, power,
                      double theta, int mode, int max_iters, double tol, double cost_floor):
    cdef const double[:, ::1] pr = np.ascontiguousarray(prices, dtype=np.float64)
    cdef const unsigned char[:, ::1] ec = np.ascontiguousarray(eca, dtype=np.uint8)
    cdef const double[:, ::1] bc = np.ascontiguousarray(base_cost, dtype=np.float64)
    cdef const double[:, ::1] ep = np.ascontiguousarray(eps, dtype=np.float64)
    cdef long[::1] sv = np.ascontiguousarray(servers, dtype=np.int64)
    cdef long[::1] cp = np.ascontiguousarray(capacity, dtype=np.int64)
    cdef double[::1] mu_v = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[::1] pw = np.ascontiguousarray(power, dtype=np.float64)
    cdef Py_ssize_t N = pr.shape[0], S = pr.shape[1], E = ec.shape[0]
    cdef Py_ssize_t n, e, i
    cdef int it

    probs_arr = np.zeros((N, E, S))
    lam_arr = np.zeros((N, S))
    wait_arr = np.zeros((N, S))
    full_arr = np.zeros((N, S))
    iters_arr = np.zeros(N, dtype=np.int64)
    conv_arr = np.zeros(N, dtype=np.uint8)
    cdef double[:, :, ::1] P = probs_arr
    cdef double[:, ::1] LAM = lam_arr
    cdef double[:, ::1] W = wait_arr
    cdef double[:, ::1] FULL = full_arr
    cdef long[::1] ITERS = iters_arr
    cdef unsigned char[::1] CONV = conv_arr

    cdef long cmax = 0
    for i in range(S):
        if cp[i] > cmax:
            cmax = cp[i]
    cdef double[::1] logw = np.zeros(cmax + 1)
    cdef double[::1] util = np.zeros(max(S, 1))
    cdef double[::1] weight = np.zeros(max(S, 1))
    cdef double[::1] zero = np.zeros(max(S, 1))
    cdef double[::1] wait = np.zeros(max(S, 1))
    cdef double[::1] lam = np.zeros(max(S, 1))
    cdef double[::1] full = np.zeros(max(S, 1))
    cdef double[:, ::1] phat = np.zeros((E, S))
    cdef double delta, step, scale
    for i in range(S):
        weight[i] = sv[i] * pw[i]

    with nogil:
        for n in range(N):
            _probs(pr[n], ec, bc, ep, &zero[0], &weight[0], theta, mode, cost_floor, P[n], &util[0])
            if mode == MODE_MSA:
                for it in range(max_iters):
                    for i in range(S):
                        lam[i] = 0.0
                    for e in range(E):
                        for i in range(S):
                            lam[i] += P[n, e, i]
                    for i in range(S):
                        _queue(lam[i], mu_v[i], sv[i], cp[i], &logw[0], &wait[i], &full[i])
                    _probs(pr[n], ec, bc, ep, &wait[0], &weight[0], theta, mode, cost_floor, phat, &util[0])
                    scale = 1.0 / (it + 1)
                    delta = 0.0
                    for e in range(E):
                        for i in range(S):
                            step = (phat[e, i] - P[n, e, i]) * scale
                            P[n, e, i] += step
                            if fabs(step) > delta:
                                delta = fabs(step)
                    ITERS[n] = it + 1
                    if delta < tol:
                        CONV[n] = 1
                        break
            else:
                CONV[n] = 1
            for i in range(S):
                LAM[n, i] = 0.0
            for e in range(E):
                for i in range(S):
                    LAM[n, i] += P[n, e, i]
            for i in range(S):
                _queue(LAM[n, i], mu_v[i], sv[i], cp[i], &logw[0], &W[n, i], &FULL[n, i])
    return probs_arr, lam_arr, wait_arr, full_arr, iters_arr, conv_arr
