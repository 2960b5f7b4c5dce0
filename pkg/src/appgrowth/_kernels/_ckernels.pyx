# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics mirror ``_pykernels`` exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, expm1, log

cnp.import_array()


def skipgram_epoch(double[:, ::1] win, double[:, ::1] wout,
                   const long long[::1] centers, const long long[::1] contexts,
                   const long long[::1] order, double lr):
    cdef Py_ssize_t W = wout.shape[0]
    cdef Py_ssize_t d = wout.shape[1]
    cdef double[::1] h = np.empty(d)
    cdef double[::1] grad_h = np.empty(d)
    cdef double[::1] p = np.empty(W)
    cdef Py_ssize_t t, o, k, c, target
    cdef double mx, s, z, total = 0.0
    for t in range(order.shape[0]):
        c = centers[order[t]]
        target = contexts[order[t]]
        for k in range(d):
            h[k] = win[c, k]
        mx = -1e300
        for o in range(W):
            z = 0.0
            for k in range(d):
                z += wout[o, k] * h[k]
            p[o] = z
            if z > mx:
                mx = z
        s = 0.0
        for o in range(W):
            p[o] = exp(p[o] - mx)
            s += p[o]
        for o in range(W):
            p[o] /= s
        total += log(p[target])
        for k in range(d):
            grad_h[k] = wout[target, k]
        for o in range(W):
            for k in range(d):
                grad_h[k] -= p[o] * wout[o, k]
        for o in range(W):
            z = -p[o]
            if o == target:
                z += 1.0
            z *= lr
            for k in range(d):
                wout[o, k] += z * h[k]
        for k in range(d):
            win[c, k] += lr * grad_h[k]
    return total


def greedy_allocate(const double[::1] cap, const double[::1] rate,
                    const double[::1] capacity, double total, long long n_steps):
    cdef Py_ssize_t C = cap.shape[0]
    cdef long long[::1] steps = np.zeros(C, dtype=np.int64)
    cdef double delta = total / n_steps
    cdef long long i, used = 0
    cdef Py_ssize_t ch, best
    cdef double now, nxt, gain, best_gain
    for i in range(n_steps):
        best = -1
        best_gain = 0.0
        for ch in range(C):
            now = -cap[ch] * expm1(-rate[ch] * (steps[ch] * delta))
            nxt = -cap[ch] * expm1(-rate[ch] * ((steps[ch] + 1) * delta))
            if now > capacity[ch]:
                now = capacity[ch]
            if nxt > capacity[ch]:
                nxt = capacity[ch]
            gain = nxt - now
            if gain > best_gain:
                best_gain = gain
                best = ch
        if best < 0:
            break
        steps[best] += 1
        used += 1
    return np.asarray(steps), used
