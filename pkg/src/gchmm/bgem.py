"""Burn-in Gibbs EM for covariate-linked infection parameters.

Coefficients are stacked role by role: ``r, a, b`` for the sigmoid link and
``r1, r2, a1, a2, b1, b2`` for the beta-exponential link, each of length K.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln, log_expit, polygamma, psi

from .data import BetaHyperParams, Covariates, exposure_counts
from .errors import DomainError, NumericalError
from .gibbs import (UNDEFINED, GibbsConfig, GibbsSampler, beta_shape_counts, count_statistics,
                    source_probabilities, transmit_source_probabilities)
from .model import (BETA_EXP, MAX_LOG_SHAPE, RECEIVE, SIGMOID, TRANSMIT, InfectionParams, LinkCoefficients,
                    beta_exp_mean)


@dataclass
class ObjectiveEval:
    value: float
    grad: np.ndarray
    hess: np.ndarray


def _Zv(Z):
    return Z.values if isinstance(Z, Covariates) else np.asarray(Z, dtype=float)


def gaussian_log_prior(eta, mu, Sigma):
    """Sum over coefficient rows of the multivariate normal log-density, with derivatives."""
    E = np.atleast_2d(eta)
    K = E.shape[1]
    P = np.linalg.inv(Sigma)
    _, logdet = np.linalg.slogdet(Sigma)
    D = E - mu
    value = float(-0.5 * np.einsum("ik,kl,il->", D, P, D) - 0.5 * len(E) * (K * np.log(2 * np.pi) + logdet))
    grad = -(D @ P).ravel()
    hess = np.kron(np.eye(len(E)), -P)
    return ObjectiveEval(value, grad, hess)


# ---------------------------------------------------------------------------
# Beta-exponential link

# Above this argument the gamma-function differences use asymptotic forms,
# since direct differences of large values cancel catastrophically.
_ASYM = 1e4


def _rising_diffs(x, c):
    """``lnG(x+c)-lnG(x)``, ``psi(x+c)-psi(x)`` and ``psi1(x+c)-psi1(x)`` for x > 0, c >= 0."""
    x, c = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(c, dtype=float))
    big = x > _ASYM
    xs, cs = np.where(big, 1.0, x), np.where(big, 0.0, c)
    lp = gammaln(xs + cs) - gammaln(xs)
    dp = psi(xs + cs) - psi(xs)
    tp = polygamma(1, xs + cs) - polygamma(1, xs)
    if np.any(big):
        xb, cb = np.where(big, x, 1.0), np.where(big, c, 0.0)
        y = xb + cb
        r = cb / xb
        d1 = -r / y
        d2 = -r * (2 + r) / (y * y)
        d3 = -r * (3 + 3 * r + r * r) / y ** 3
        l1p = np.log1p(r)
        lp = np.where(big, (xb - 0.5) * l1p + cb * np.log(y) - cb + d1 / 12 - d3 / 360, lp)
        dp = np.where(big, l1p - 0.5 * d1 - d2 / 12, dp)
        tp = np.where(big, d1 + 0.5 * d2 + d3 / 6, tp)
    return lp, dp, tp


def _log_beta_ratio_terms(A, B, c1, c2):
    """Value and u-derivatives of log B(A+c1, B+c2) - log B(A, B) with A=e^u1, B=e^u2."""
    la, da, ta = _rising_diffs(A, c1)
    lb, db, tb = _rising_diffs(B, c2)
    lab, dab, tab = _rising_diffs(A + B, c1 + c2)
    val = la + lb - lab
    D1 = da - dab
    D2 = db - dab
    T1 = ta - tab
    T2 = tb - tab
    g1, g2 = A * D1, B * D2
    h11 = A * D1 + A * A * T1
    h22 = B * D2 + B * B * T2
    h12 = -A * B * tab
    return val, g1, g2, h11, h22, h12


def betaexp_objective(Z, link, increments, weights=None):
    """Weighted sum of integrated beta-exp log-likelihoods plus the Gaussian log-prior.

    ``increments`` is a list of ``(6, N)`` count arrays (see
    :func:`gchmm.gibbs.beta_shape_counts`), one per sample.
    """
    Zv = _Zv(Z)
    N, K = Zv.shape
    weights = np.full(len(increments), 1.0 / max(len(increments), 1)) if weights is None else np.asarray(weights)
    U = Zv @ link.eta.T                                  # (N, 6)
    if np.any(U > MAX_LOG_SHAPE):
        raise NumericalError("exp(z.eta) overflows; rescale the covariates")
    S = np.exp(U)
    prior = gaussian_log_prior(link.eta, link.mu, link.Sigma)
    value = prior.value
    grad = prior.grad.copy()
    hess = prior.hess.copy()
    for role in range(3):
        i1, i2 = 2 * role, 2 * role + 1
        A, B = S[:, i1], S[:, i2]
        gu1 = np.zeros(N)
        gu2 = np.zeros(N)
        h11 = np.zeros(N)
        h22 = np.zeros(N)
        h12 = np.zeros(N)
        for inc, w in zip(increments, weights):
            v, a, b, c, d, e = _log_beta_ratio_terms(A, B, inc[i1], inc[i2])
            value += w * math.fsum(v)   # order-free, so person permutations agree exactly
            gu1 += w * a
            gu2 += w * b
            h11 += w * c
            h22 += w * d
            h12 += w * e
        s1, s2 = slice(i1 * K, i1 * K + K), slice(i2 * K, i2 * K + K)
        grad[s1] += Zv.T @ gu1
        grad[s2] += Zv.T @ gu2
        hess[s1, s1] += (Zv * h11[:, None]).T @ Zv
        hess[s2, s2] += (Zv * h22[:, None]).T @ Zv
        cross = (Zv * h12[:, None]).T @ Zv
        hess[s1, s2] += cross
        hess[s2, s1] += cross.T
    return ObjectiveEval(value, grad, hess)


def log_likelihood_betaexp(X, R, Z, eta, G=None, counts=None):
    """Integrated complete-data log-likelihood, receive interpretation."""
    if counts is None:
        counts = count_statistics(X, R, G, RECEIVE)
    return betaexp_objective(Z, eta, [beta_shape_counts(counts)], [1.0])


def log_likelihood_betaexp_transmit(X, R, Z, eta, G=None, counts=None):
    """Integrated complete-data log-likelihood, transmit interpretation."""
    if counts is None:
        counts = count_statistics(X, R, G, TRANSMIT)
    return betaexp_objective(Z, eta, [beta_shape_counts(counts)], [1.0])


def transmit_beta_loglik_direct(X, R, G, beta):
    """Log of the beta-dependent source factor, multiplied out over (n, t, source)."""
    X = np.asarray(X)
    N, T1 = X.shape
    total = 0.0
    for n in range(N):
        for t in range(T1 - 1):
            if X[n, t] != 0:
                continue
            src = [m for m in G.neighbors(n, t + 1) if X[m, t] == 1]
            if X[n, t + 1] == 0 or R[n, t] == 0:
                total += sum(np.log1p(-beta[m]) for m in src)
            elif R[n, t] > 0:
                total += np.log(beta[R[n, t] - 1])
    return total


def transmit_beta_loglik_reindexed(counts, beta):
    """Same factor regrouped per source person: ``beta_n^C_{R=n} (1-beta_n)^C_{R!=n}``."""
    return float(np.sum(counts.r_is_n * np.log(beta) + counts.r_not_n * np.log1p(-beta)))


# ---------------------------------------------------------------------------
# Sigmoid link

@dataclass
class SigmoidStats:
    """Sufficient statistics of the exact sigmoid-link likelihood.

    ``n00``/``b00`` count 0->0 cells against each person's own ``alpha`` and
    against each ``beta`` (with multiplicity). Every infection event ``e``
    has its person and a row of source multiplicities ``B[e]``.
    """

    c10: np.ndarray
    c11: np.ndarray
    n00: np.ndarray
    b00: np.ndarray
    ev_person: np.ndarray
    ev_B: np.ndarray
    ev_w: np.ndarray

    @classmethod
    def from_states(cls, X, G, interp=RECEIVE, weight=1.0):
        X = np.asarray(X)
        N = X.shape[0]
        prev, nxt = X[:, :-1], X[:, 1:]
        s00 = (prev == 0) & (nxt == 0)
        s01 = (prev == 0) & (nxt == 1)
        A = G.adjacency[1:]
        n_e, t_e = np.nonzero(s01)
        if interp == RECEIVE:
            C = exposure_counts(X, G)[:, 1:]
            b00 = (C * s00).sum(1).astype(float)
            B = np.zeros((len(n_e), N))
            B[np.arange(len(n_e)), n_e] = C[n_e, t_e]
        else:
            # source m is counted once per contact n that stayed healthy while m was infected
            b00 = (X[:, :-1] * np.einsum("tij,it->jt", A.astype(np.int64), s00.astype(np.int64))).sum(1)
            b00 = b00.astype(float)
            B = (A[t_e, n_e, :] & (X[:, t_e].T == 1)).astype(float)
        w = float(weight)
        return cls(w * ((prev == 1) & (nxt == 0)).sum(1), w * ((prev == 1) & (nxt == 1)).sum(1),
                   w * s00.sum(1), w * b00, n_e, B, np.full(len(n_e), w))

    def __add__(self, o):
        return SigmoidStats(self.c10 + o.c10, self.c11 + o.c11, self.n00 + o.n00, self.b00 + o.b00,
                            np.concatenate([self.ev_person, o.ev_person]),
                            np.vstack([self.ev_B, o.ev_B]), np.concatenate([self.ev_w, o.ev_w]))


def sigmoid_objective(Z, link, stats):
    Zv = _Zv(Z)
    N, K = Zv.shape
    U = Zv @ link.eta.T
    ur, ua, ub = U[:, 0], U[:, 1], U[:, 2]
    sr, sa, sb = expit(ur), expit(ua), expit(ub)
    prior = gaussian_log_prior(link.eta, link.mu, link.Sigma)
    value = prior.value
    grad = prior.grad.copy()
    hess = prior.hess.copy()
    r, a, b = slice(0, K), slice(K, 2 * K), slice(2 * K, 3 * K)

    # recovery terms
    value += float(stats.c10 @ log_expit(ur) + stats.c11 @ log_expit(-ur))
    gr = stats.c10 * (1 - sr) - stats.c11 * sr
    hr = -(stats.c10 + stats.c11) * sr * (1 - sr)
    # staying healthy: log(1-alpha) and log(1-beta) per exposure
    value += float(stats.n00 @ log_expit(-ua) + stats.b00 @ log_expit(-ub))
    ga = -stats.n00 * sa
    gb = -stats.b00 * sb
    ha = -stats.n00 * sa * (1 - sa)
    hb = -stats.b00 * sb * (1 - sb)
    grad[r] += Zv.T @ gr
    grad[a] += Zv.T @ ga
    grad[b] += Zv.T @ gb
    hess[r, r] += (Zv * hr[:, None]).T @ Zv
    hess[a, a] += (Zv * ha[:, None]).T @ Zv
    hess[b, b] += (Zv * hb[:, None]).T @ Zv

    if len(stats.ev_person):
        pe = stats.ev_person
        Bm = stats.ev_B
        w = stats.ev_w
        L = log_expit(-ua[pe]) + Bm @ log_expit(-ub)        # log P(stay healthy) <= 0
        if np.any(L >= 0):
            raise NumericalError("infection event with zero infection probability")
        value += float(w @ np.log(-np.expm1(L)))
        wl = 1.0 / np.expm1(-L)
        f1 = -wl * w
        f2 = -(wl + wl * wl) * w
        dLa = -sa[pe][:, None] * Zv[pe]                    # (E, K)
        dLb = -(Bm * sb[None, :]) @ Zv                      # (E, K)
        g = np.hstack([dLa, dLb])
        grad[K:] += g.T @ f1
        hess[K:, K:] += (g * f2[:, None]).T @ g
        # second derivative of L itself
        ha_e = np.zeros(N)
        np.add.at(ha_e, pe, f1 * (-sa[pe] * (1 - sa[pe])))
        hb_e = (f1 @ Bm) * (-sb * (1 - sb))
        hess[a, a] += (Zv * ha_e[:, None]).T @ Zv
        hess[b, b] += (Zv * hb_e[:, None]).T @ Zv
    return ObjectiveEval(value, grad, hess)


def log_likelihood_sigmoid(X, Z, eta, G, interp=RECEIVE):
    """Exact complete-data log-likelihood under the sigmoid link (no sources needed)."""
    return sigmoid_objective(Z, eta, SigmoidStats.from_states(X, G, interp))


# ---------------------------------------------------------------------------
# Optimizer

@dataclass
class NewtonInfo:
    iterations: int
    values: list
    grad_norm: float
    fallback: bool = False


def _neg_definite(H):
    H = 0.5 * (H + H.T)
    lam, V = np.linalg.eigh(H)
    if not np.all(np.isfinite(lam)):
        return None
    scale = max(np.max(np.abs(lam)), 1e-12)
    lam_reg = -np.maximum(np.abs(lam), 1e-8 * scale)
    if np.all(np.abs(lam) < 1e-14):
        return None
    return V, lam_reg


def newton_step(objective, eta, max_inner=5, tol=1e-8, armijo=1e-4, max_halvings=40):
    """Damped Newton ascent on ``objective``; returns ``(eta, NewtonInfo)``.

    The Hessian is made negative definite by flipping and flooring its
    eigenvalues. Steps are halved until the Armijo condition holds, so
    accepted steps never lower the objective.
    """
    eta = np.asarray(eta, dtype=float).copy()
    cur = objective(eta)
    values = [cur.value]
    fallback = False
    it = 0
    for it in range(1, max_inner + 1):
        G = cur.grad
        if np.max(np.abs(G)) < tol:
            it -= 1
            break
        reg = _neg_definite(cur.hess)
        if reg is None:
            warnings.warn("Hessian unusable; taking a gradient step", stacklevel=2)
            d = G / max(np.linalg.norm(G), 1.0)
            fallback = True
        else:
            V, lam = reg
            d = -V @ ((V.T @ G) / lam)
        slope = float(G @ d)
        step = 1.0
        accepted = False
        for _ in range(max_halvings):
            cand = eta + step * d
            try:
                new = objective(cand)
            except NumericalError:
                new = None
            if new is not None and np.isfinite(new.value) and new.value >= cur.value + armijo * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        eta, cur = cand, new
        values.append(cur.value)
    return eta, NewtonInfo(it, values, float(np.max(np.abs(cur.grad))), fallback)


def step_size_schedule(k):
    """Step size ``1/k`` for EM iteration ``k >= 1``."""
    if k < 1:
        raise DomainError("iteration index starts at 1")
    return 1.0 / k


# ---------------------------------------------------------------------------
# Burn-in Gibbs EM

@dataclass
class BgemConfig:
    J: int = 50
    B: int = 25
    max_iters: int = 10
    tol: float = 1e-3
    link: str = SIGMOID
    interp: str = RECEIVE
    fast: bool = False
    max_inner: int = 5
    drop_both: bool = True
    mu: np.ndarray = None
    Sigma: np.ndarray = None
    hyper: BetaHyperParams = field(default_factory=BetaHyperParams)
    schedule: object = step_size_schedule

    def __post_init__(self):
        if not 0 <= self.B < self.J:
            raise DomainError("burn-in must satisfy 0 <= B < J")
        if self.link not in (SIGMOID, BETA_EXP):
            raise DomainError(f"unknown link {self.link!r}")
        if self.interp not in (RECEIVE, TRANSMIT):
            raise DomainError(f"unknown beta interpretation {self.interp!r}")
        if self.max_iters < 1:
            raise DomainError("at least one EM iteration required")


@dataclass
class BgemResult:
    link: LinkCoefficients
    posterior_x: np.ndarray
    gamma: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    params: object               # InfectionParams averaged over the last E-step
    iterations: int
    converged: bool
    diagnostics: list


def _pseudo_sources(Xh, R_draws, X_draws, params, G, interp):
    """Majority source label per 0->1 cell of ``Xh``; falls back to the most likely label."""
    N, T1 = Xh.shape
    R = np.full((N, T1 - 1), UNDEFINED, dtype=np.int32)
    inf = np.argwhere((Xh[:, :-1] == 0) & (Xh[:, 1:] == 1))
    Rs = np.stack(R_draws) if R_draws else np.zeros((0, N, T1 - 1), dtype=np.int32)
    for n, t in inf:
        src = [int(m) for m in G.neighbors(n, t + 1) if Xh[m, t] == 1]
        labels = Rs[:, n, t]
        if interp == RECEIVE:
            valid = labels[labels > 0]
            if len(src) == 0:
                R[n, t] = 1
            elif len(valid):
                R[n, t] = 2 if np.mean(valid >= 2) > 0.5 else 1
            else:
                p = source_probabilities(params.alpha[n], params.beta[n], len(src), drop_both=True)
                R[n, t] = 1 + int(np.argmax(p[:2]))
        else:
            allowed = [0] + [m + 1 for m in src]
            valid = labels[np.isin(labels, allowed)]
            if len(valid):
                vals, cnt = np.unique(valid, return_counts=True)
                R[n, t] = int(vals[np.argmax(cnt)])
            else:
                p = transmit_source_probabilities(params.alpha[n], params.beta[src] if src else [])
                R[n, t] = allowed[int(np.argmax(p))]
    return R


def _maximize(Z, link, cfg, stats, start):
    if cfg.link == SIGMOID:
        f = lambda e: sigmoid_objective(Z, link.with_eta(e), stats)  # noqa: E731
    else:
        f = lambda e: betaexp_objective(Z, link.with_eta(e), stats)  # noqa: E731
    eta, info = newton_step(f, start.ravel(), cfg.max_inner)
    return eta.reshape(link.eta.shape), info


def implied_params(Z, link):
    """Per-person ``(gamma, alpha, beta)`` implied by the link coefficients."""
    Zv = _Zv(Z)
    if link.kind == SIGMOID:
        u = expit(Zv @ link.eta.T)
        return u[:, 0], u[:, 1], u[:, 2]
    return beta_exp_mean(Zv, link)


def run_bgem(Y, G, Z, config=None, rng=None):
    """Alternate Gibbs E-steps under the current coefficients with Newton M-steps."""
    cfg = config or BgemConfig()
    Zv = _Zv(Z)
    link = LinkCoefficients.zeros(Zv.shape[1], cfg.link, cfg.mu, cfg.Sigma)
    gcfg = GibbsConfig(iterations=cfg.J, burnin=cfg.B, interp=cfg.interp, drop_both=cfg.drop_both,
                       homogeneous=False, link=link, hyper=cfg.hyper)
    sampler = GibbsSampler(Y, G, gcfg, Zv, rng)
    diagnostics = []
    converged = False
    k = 0
    post_x = None
    params_mean = None
    for k in range(1, cfg.max_iters + 1):
        sampler.set_link(link)
        xsum = np.zeros((sampler.N, sampler.T + 1))
        X_draws, R_draws, pdraws = [], [], []
        for j in range(1, cfg.J + 1):
            sampler.sweep()
            if j <= cfg.B:
                continue
            xsum += sampler.X
            X_draws.append(sampler.X.copy())
            R_draws.append(sampler.R.copy())
            pdraws.append(sampler.params)
        kept = cfg.J - cfg.B
        post_x = xsum / kept
        params_mean = _average_params(pdraws)
        w = 1.0 / kept

        def stats_of(X, R, weight):
            if cfg.link == SIGMOID:
                return SigmoidStats.from_states(X, G, cfg.interp, weight)
            return beta_shape_counts(count_statistics(X, R, G, cfg.interp))

        last = stats_of(X_draws[-1], R_draws[-1], 1.0)
        if cfg.fast:
            Xh = (post_x > 0.5).astype(np.int8)
            Rh = _pseudo_sources(Xh, R_draws, X_draws, params_mean, G, cfg.interp) \
                if cfg.link == BETA_EXP else None
            avg = stats_of(Xh, Rh, 1.0)
            if cfg.link == BETA_EXP:
                avg = [avg]
        elif cfg.link == SIGMOID:
            avg = stats_of(X_draws[0], None, w)
            for X in X_draws[1:]:
                avg = avg + stats_of(X, None, w)
        else:
            avg = [stats_of(X, R, w) for X, R in zip(X_draws, R_draws)]
        sem = last if cfg.link == SIGMOID else [last]

        eta_b, info_b = _maximize(Zv, link, cfg, avg, link.eta)
        eta_s, info_s = _maximize(Zv, link, cfg, sem, link.eta)
        delta = cfg.schedule(k)
        eta_new = (1.0 - delta) * eta_b + delta * eta_s
        change = float(np.max(np.abs(eta_new - link.eta)))
        diagnostics.append({
            "iteration": k, "step_size": delta, "change": change,
            "q_bgem": info_b.values[-1], "q_sem": info_s.values[-1],
            "grad_norm_bgem": info_b.grad_norm, "grad_norm_sem": info_s.grad_norm,
        })
        link = link.with_eta(eta_new)
        if change < cfg.tol:
            converged = True
            break
    g, a, b = implied_params(Zv, link)
    return BgemResult(link, post_x, g, a, b, params_mean, k, converged, diagnostics)


def _average_params(draws):
    return InfectionParams(np.mean([p.gamma for p in draws], 0), np.mean([p.alpha for p in draws], 0),
                           np.mean([p.beta for p in draws], 0), float(np.mean([p.pi for p in draws])),
                           np.mean([p.theta for p in draws], 0))
