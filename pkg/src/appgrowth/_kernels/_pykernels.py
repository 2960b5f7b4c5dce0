"""Pure-Python versions of the compiled kernels.

Same loop order and the same libm calls as ``_ckernels.pyx``; numpy is used
only where the reduction order does not feed a branch.
"""

import math

import numpy as np


def skipgram_epoch(win, wout, centers, contexts, order, lr):
    """One SGD pass of full-softmax skip-gram over ``(center, context)`` pairs.

    Updates ``win`` and ``wout`` in place and returns the sum of the
    pre-update log-probabilities of the visited pairs.
    """
    total = 0.0
    for t in order:
        c = centers[t]
        target = contexts[t]
        h = win[c].copy()
        z = wout @ h
        z -= z.max()
        p = np.exp(z)
        p /= p.sum()
        total += math.log(p[target])
        grad_h = wout[target] - p @ wout
        coef = -p
        coef[target] += 1.0
        wout += lr * np.outer(coef, h)
        win[c] += lr * grad_h
    return total


def greedy_allocate(cap, rate, capacity, total, n_steps):
    """Give ``n_steps`` equal increments of ``total`` to the best marginal channel.

    Returns the per-channel increment counts and the number of increments
    spent (fewer than ``n_steps`` when every channel is capacity-bound).
    """
    C = len(cap)
    steps = np.zeros(C, dtype=np.int64)
    delta = total / n_steps
    used = 0
    for _ in range(int(n_steps)):
        best, best_gain = -1, 0.0
        for ch in range(C):
            now = -cap[ch] * math.expm1(-rate[ch] * (steps[ch] * delta))
            nxt = -cap[ch] * math.expm1(-rate[ch] * ((steps[ch] + 1) * delta))
            gain = min(nxt, capacity[ch]) - min(now, capacity[ch])
            if gain > best_gain:
                best_gain, best = gain, ch
        if best < 0:
            break
        steps[best] += 1
        used += 1
    return steps, used
