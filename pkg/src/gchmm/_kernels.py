"""Numba kernels for the Gibbs sampler.

Adjacency is passed in CSR form: the contacts of ``n`` on day ``t`` are
``idx[ptr[t, n]:ptr[t, n + 1]]``. All randomness arrives as pre-drawn
uniforms so results depend only on the caller's generator.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def stay_prob(X, ptr, idx, alpha, beta, transmit, n, t, exclude):
    """P(x[n, t] = 0 | x[n, t-1] = 0) given the states at ``t-1``, ignoring ``exclude``."""
    s = 1.0 - alpha[n]
    for k in range(ptr[t, n], ptr[t, n + 1]):
        m = idx[k]
        if m == exclude or X[m, t - 1] != 1:
            continue
        if transmit:
            s *= 1.0 - beta[m]
        else:
            s *= 1.0 - beta[n]
    return s


@njit(cache=True)
def _log_trans(prev, nxt, g, st):
    if prev == 1:
        return np.log(g) if nxt == 0 else np.log(1.0 - g)
    return np.log(st) if nxt == 0 else np.log(1.0 - st)


@njit(cache=True)
def site_logp(X, ev, ptr, idx, gamma, alpha, beta, pi, transmit, n, t):
    """Unnormalized log full conditional of ``x[n, t]`` for values 0 and 1."""
    T = X.shape[1] - 1
    g = gamma[n]
    if t == 0:
        l0 = np.log(1.0 - pi)
        l1 = np.log(pi)
    else:
        prev = X[n, t - 1]
        st = stay_prob(X, ptr, idx, alpha, beta, transmit, n, t, -1) if prev == 0 else 1.0
        l0 = _log_trans(prev, 0, g, st) + ev[n, t, 0]
        l1 = _log_trans(prev, 1, g, st) + ev[n, t, 1]
    if t < T:
        nx = X[n, t + 1]
        l1 += _log_trans(1, nx, g, 1.0)
        st = stay_prob(X, ptr, idx, alpha, beta, transmit, n, t + 1, -1)
        l0 += _log_trans(0, nx, g, st)
        # contacts whose next transition sees x[n, t] as a possible source
        for k in range(ptr[t + 1, n], ptr[t + 1, n + 1]):
            j = idx[k]
            if X[j, t] == 1:
                continue
            st_ex = stay_prob(X, ptr, idx, alpha, beta, transmit, j, t + 1, n)
            q = 1.0 - (beta[n] if transmit else beta[j])
            nxj = X[j, t + 1]
            l0 += _log_trans(0, nxj, g, st_ex)
            l1 += _log_trans(0, nxj, g, st_ex * q)
    return l0, l1


@njit(cache=True)
def prob_one(l0, l1):
    if l1 == -np.inf:
        return 0.0
    if l0 == -np.inf:
        return 1.0
    return 1.0 / (1.0 + np.exp(l0 - l1))


@njit(cache=True)
def x_sweep(X, ev, ptr, idx, gamma, alpha, beta, pi, transmit, U):
    """One raster scan over (t, n) updating every hidden state in place."""
    N, T1 = X.shape
    for t in range(T1):
        for n in range(N):
            l0, l1 = site_logp(X, ev, ptr, idx, gamma, alpha, beta, pi, transmit, n, t)
            X[n, t] = 1 if U[t, n] < prob_one(l0, l1) else 0


@njit(cache=True)
def sample_sources_transmit(X, ptr, idx, alpha, beta, U, R):
    """Draw the infecting contact (id + 1) or 0 for outside, on every 0->1 cell."""
    N, T1 = X.shape
    for n in range(N):
        for t in range(T1 - 1):
            R[n, t] = -1
            if X[n, t] != 0 or X[n, t + 1] != 1:
                continue
            w0 = alpha[n]
            tot_in = 0.0
            for k in range(ptr[t + 1, n], ptr[t + 1, n + 1]):
                m = idx[k]
                if X[m, t] == 1:
                    w0 *= 1.0 - beta[m]
                    tot_in += (1.0 - alpha[n]) * beta[m]
            total = w0 + tot_in
            u = U[n, t] * total
            if u < w0 or tot_in == 0.0:
                R[n, t] = 0
                continue
            acc = w0
            chosen = -1
            for k in range(ptr[t + 1, n], ptr[t + 1, n + 1]):
                m = idx[k]
                if X[m, t] == 1:
                    acc += (1.0 - alpha[n]) * beta[m]
                    chosen = m
                    if u < acc:
                        break
            R[n, t] = chosen + 1
