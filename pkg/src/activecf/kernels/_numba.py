"""Numba-compiled kernels with the same contracts as ``_numpy``."""

import math

import numpy as np
from numba import njit

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_TINY = 1e-300


@njit(cache=True)
def em_estep(values, users, items, log_simplex, mu, sigma, beta=1.0):
    t = values.shape[0]
    k = mu.shape[0]
    resp = np.empty((t, k))
    logp = np.empty(k)
    total = 0.0
    for i in range(t):
        x = items[i]
        y = users[i]
        top = -np.inf
        for z in range(k):
            d = (values[i] - mu[z, x]) / sigma[z, x]
            v = beta * (-0.5 * d * d - math.log(sigma[z, x]) - LOG_SQRT_2PI) + log_simplex[y, z]
            logp[z] = v
            if v > top:
                top = v
        s = 0.0
        for z in range(k):
            w = math.exp(logp[z] - top)
            resp[i, z] = w
            s += w
        for z in range(k):
            resp[i, z] /= s
        total += top + math.log(s)
    return resp, total


@njit(cache=True)
def fold_in_fixed_point(p, theta0, tol, max_iter):
    n, k = p.shape
    theta = theta0.astype(np.float64).copy()
    new = np.empty(k)
    it = 0
    while it < max_iter:
        it += 1
        new[:] = 0.0
        for i in range(n):
            s = 0.0
            for z in range(k):
                s += p[i, z] * theta[z]
            if s <= 0.0:
                s = _TINY
            for z in range(k):
                new[z] += p[i, z] * theta[z] / s
        tot = 0.0
        for z in range(k):
            new[z] /= n
            tot += new[z]
        diff = 0.0
        for z in range(k):
            v = new[z] / tot
            d = abs(v - theta[z])
            if d > diff:
                diff = d
            theta[z] = v
        if diff < tol:
            break
    return theta, it


@njit(cache=True)
def fast_update_batch(p, alpha, theta0, tol, max_iter):
    b, k = p.shape
    norm = 1.0
    for z in range(k):
        norm += alpha[z] - 1.0
    theta = np.empty((b, k))
    iters = np.zeros(b, dtype=np.int64)
    cur = np.empty(k)
    new = np.empty(k)
    for row in range(b):
        for z in range(k):
            cur[z] = theta0[z]
        it = 0
        while it < max_iter:
            it += 1
            s = 0.0
            for z in range(k):
                s += p[row, z] * cur[z]
            if s <= 0.0:
                s = _TINY
            tot = 0.0
            for z in range(k):
                new[z] = (p[row, z] * cur[z] / s + alpha[z] - 1.0) / norm
                tot += new[z]
            diff = 0.0
            for z in range(k):
                v = new[z] / tot
                d = abs(v - cur[z])
                if d > diff:
                    diff = d
                cur[z] = v
            if diff < tol:
                break
        for z in range(k):
            theta[row, z] = cur[z]
        iters[row] = it
    return theta, iters
