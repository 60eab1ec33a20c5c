"""Compiled inner loops for long sequences.

Conventions: ``transition[s, s_prev]``, ``emission[x, s]``, labels 0-based,
``x[i-1]`` is the observation emitted by state ``s_i`` (``s_0`` emits nothing).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _draw(cum, u):
    n = cum.shape[0]
    for k in range(n):
        if u < cum[k]:
            return k
    # u landed in the rounding gap above the last cumulative value
    for k in range(n - 1, -1, -1):
        if k == 0 or cum[k] > cum[k - 1]:
            return k
    return n - 1


@njit(cache=True)
def sample_path(trans_cum, emis_cum, init_cum, u_state, u_obs):
    n = u_obs.shape[0]
    states = np.empty(n + 1, dtype=np.int64)
    obs = np.empty(n, dtype=np.int64)
    states[0] = _draw(init_cum, u_state[0])
    for i in range(1, n + 1):
        states[i] = _draw(trans_cum[:, states[i - 1]], u_state[i])
        obs[i - 1] = _draw(emis_cum[:, states[i]], u_obs[i - 1])
    return states, obs


@njit(cache=True)
def forward(transition, emission, init, x, use_max):
    """Rescaled forward pass; returns (loglik, alpha_hat, log_scales)."""
    L = transition.shape[0]
    n = x.shape[0]
    alpha = np.zeros((n + 1, L))
    log_scales = np.zeros(n + 1)
    for s in range(L):
        alpha[0, s] = init[s]
    loglik = 0.0
    comp = 0.0  # Kahan compensation: the naive sum drifts by ~1e-7 at n = 1e5
    for i in range(1, n + 1):
        xi = x[i - 1]
        norm = 0.0
        for s in range(L):
            acc = 0.0
            for sp in range(L):
                acc += transition[s, sp] * alpha[i - 1, sp]
            acc *= emission[xi, s]
            alpha[i, s] = acc
            if use_max:
                if acc > norm:
                    norm = acc
            else:
                norm += acc
        if norm <= 0.0:
            return -np.inf, alpha, log_scales
        for s in range(L):
            alpha[i, s] /= norm
        log_scales[i] = np.log(norm)
        y = log_scales[i] - comp
        t = loglik + y
        comp = (t - loglik) - y
        loglik = t
    total = 0.0
    for s in range(L):
        total += alpha[n, s]
    if total <= 0.0:
        return -np.inf, alpha, log_scales
    return loglik + np.log(total), alpha, log_scales


@njit(cache=True)
def backward(transition, emission, x, log_scales):
    L = transition.shape[0]
    n = x.shape[0]
    beta = np.ones((n + 1, L))
    for i in range(n, 0, -1):
        xi = x[i - 1]
        c = np.exp(log_scales[i])
        for sp in range(L):
            acc = 0.0
            for s in range(L):
                acc += transition[s, sp] * emission[xi, s] * beta[i, s]
            beta[i - 1, sp] = acc / c
    return beta


@njit(cache=True)
def posteriors(transition, emission, init, x):
    """Singleton (n+1, L) and pairwise (n, L, L) posterior marginals."""
    L = transition.shape[0]
    n = x.shape[0]
    loglik, alpha, log_scales = forward(transition, emission, init, x, False)
    gamma = np.zeros((n + 1, L))
    pair = np.zeros((n, L, L))
    if not np.isfinite(loglik):
        return loglik, gamma, pair
    beta = backward(transition, emission, x, log_scales)
    for i in range(n + 1):
        for s in range(L):
            gamma[i, s] = alpha[i, s] * beta[i, s]
    for i in range(1, n + 1):
        xi = x[i - 1]
        c = np.exp(log_scales[i])
        for s in range(L):
            w = emission[xi, s] * beta[i, s] / c
            for sp in range(L):
                pair[i - 1, s, sp] = alpha[i - 1, sp] * transition[s, sp] * w
    return loglik, gamma, pair


@njit(cache=True)
def expected_counts(transition, emission, init, x):
    """Sufficient statistics for one Baum-Welch M-step without storing pairwise marginals."""
    L = transition.shape[0]
    M = emission.shape[0]
    n = x.shape[0]
    trans_counts = np.zeros((L, L))
    emis_counts = np.zeros((M, L))
    loglik, alpha, log_scales = forward(transition, emission, init, x, False)
    if not np.isfinite(loglik):
        return loglik, trans_counts, emis_counts
    beta = backward(transition, emission, x, log_scales)
    for i in range(1, n + 1):
        xi = x[i - 1]
        c = np.exp(log_scales[i])
        for s in range(L):
            emis_counts[xi, s] += alpha[i, s] * beta[i, s]
            w = emission[xi, s] * beta[i, s] / c
            for sp in range(L):
                trans_counts[s, sp] += alpha[i - 1, sp] * transition[s, sp] * w
    return loglik, trans_counts, emis_counts


@njit(cache=True)
def viterbi(log_trans, log_emis, log_init, x, rtol):
    """Max-product decoding with lowest-index tie-breaking.

    Returns (path, score, tie_count). A choice is a tie when another
    candidate lies within ``rtol * max(1, |best|)`` of the best value.
    """
    L = log_trans.shape[0]
    n = x.shape[0]
    delta = np.empty((n + 1, L))
    back = np.zeros((n + 1, L), dtype=np.int64)
    tied = np.zeros((n + 1, L), dtype=np.bool_)
    for s in range(L):
        delta[0, s] = log_init[s]
    for i in range(1, n + 1):
        xi = x[i - 1]
        for s in range(L):
            best = -np.inf
            for sp in range(L):
                v = delta[i - 1, sp] + log_trans[s, sp]
                if v > best:
                    best = v
            if best == -np.inf:
                delta[i, s] = -np.inf
                back[i, s] = 0
                continue
            tol = rtol * max(1.0, abs(best))
            arg = -1
            count = 0
            for sp in range(L):
                v = delta[i - 1, sp] + log_trans[s, sp]
                if v >= best - tol:
                    count += 1
                    if arg < 0:
                        arg = sp
            back[i, s] = arg
            tied[i, s] = count > 1
            delta[i, s] = delta[i - 1, arg] + log_trans[s, arg] + log_emis[xi, s]
    path = np.zeros(n + 1, dtype=np.int64)
    best = -np.inf
    for s in range(L):
        if delta[n, s] > best:
            best = delta[n, s]
    if best == -np.inf:
        return path, best, 0
    tol = rtol * max(1.0, abs(best))
    ties = 0
    arg = -1
    count = 0
    for s in range(L):
        if delta[n, s] >= best - tol:
            count += 1
            if arg < 0:
                arg = s
    if count > 1:
        ties += 1
    path[n] = arg
    for i in range(n, 0, -1):
        if tied[i, path[i]]:
            ties += 1
        path[i - 1] = back[i, path[i]]
    return path, delta[n, arg], ties
