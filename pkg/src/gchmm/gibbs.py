"""Gibbs sampling for homogeneous and covariate-linked GCHMMs.

One sweep updates, in order: infection parameters (from counts and the
link, or fixed), ``pi`` and ``theta``, every hidden state in a raster scan
by ``(t, n)``, then the auxiliary infection sources ``R``. Missing symptoms
are integrated out of the state update and imputed afterwards for output.

``R`` has shape ``(N, T)``; column ``t`` labels the transition ``t -> t+1``
and holds :data:`UNDEFINED` off 0->1 cells. Receive-mode labels are 1
(outside), 2 (inside) and 3 (both). Transmit-mode labels are 0 (outside)
or ``j + 1`` for the infecting contact ``j``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import _kernels as K
from .data import MISSING, BetaHyperParams, Covariates, check_symptoms, exposure_counts
from .errors import DomainError, IntegrityError
from .model import BETA_EXP, RECEIVE, SIGMOID, TRANSMIT, InfectionParams, LinkCoefficients, beta_exp_shapes

UNDEFINED = -1

NEUTRAL = dict(gamma=0.1, alpha=0.1, beta=0.1, pi=0.1, theta0=0.1, theta1=0.9)


def neutral_params(N, S):
    th = np.vstack([np.full(S, NEUTRAL["theta0"]), np.full(S, NEUTRAL["theta1"])])
    return InfectionParams.homogeneous(N, NEUTRAL["gamma"], NEUTRAL["alpha"], NEUTRAL["beta"],
                                       NEUTRAL["pi"], th)


# ---------------------------------------------------------------------------
# Infection probability and its three-way split

def infection_probability(alpha, beta=0.0, C=0, neighbor_betas=None):
    """``1 - (1-alpha)(1-beta)^C``, or with per-contact betas in transmit mode."""
    if neighbor_betas is not None:
        return 1.0 - (1.0 - alpha) * np.prod(1.0 - np.asarray(neighbor_betas, dtype=float))
    return 1.0 - (1.0 - alpha) * (1.0 - beta) ** C


def decomposition_terms(alpha, beta, C):
    """Exact (outside, inside, both) numerators; they sum to the infection probability."""
    surv = (1.0 - beta) ** C
    return alpha * surv, (1.0 - alpha) * (1.0 - surv), alpha * (1.0 - surv)


def approx_decomposition_terms(alpha, beta, C):
    """First-order (outside, inside, both) terms: ``alpha(1-beta)^C, C(1-alpha)beta, C alpha beta``."""
    return alpha * (1.0 - beta) ** C, C * (1.0 - alpha) * beta, C * alpha * beta


def source_probabilities(alpha, beta, C, drop_both=False):
    """P(R = outside, inside, both) on a 0->1 transition with ``C`` infected contacts."""
    if C == 0:
        return np.array([1.0, 0.0, 0.0])
    p = np.array(decomposition_terms(alpha, beta, C), dtype=float)
    if drop_both:
        p[2] = 0.0
    return p / p.sum()


def transmit_source_probabilities(alpha, neighbor_betas):
    """P(R = outside, contact 1, contact 2, ...) in transmit mode."""
    b = np.asarray(neighbor_betas, dtype=float)
    w = np.concatenate([[alpha * np.prod(1.0 - b)], (1.0 - alpha) * b])
    if w[1:].sum() == 0.0:
        return np.concatenate([[1.0], np.zeros(len(b))])
    return w / w.sum()


def sample_aux_source(X, params, G, rng, mode=RECEIVE, drop_both=True):
    """Draw ``R`` given the states; see the module docstring for the label coding."""
    X = np.asarray(X, dtype=np.int8)
    N, T1 = X.shape
    T = T1 - 1
    R = np.full((N, T), UNDEFINED, dtype=np.int32)
    U = rng.random((N, T))
    if mode == TRANSMIT:
        ptr, idx = G.csr
        K.sample_sources_transmit(X, ptr, idx, params.alpha, params.beta, U, R)
        return R
    C = exposure_counts(X, G)[:, 1:]
    inf = (X[:, :-1] == 0) & (X[:, 1:] == 1)
    a = params.alpha[:, None]
    b = params.beta[:, None]
    surv = (1.0 - b) ** C
    p1 = a * surv
    p2 = (1.0 - a) * (1.0 - surv)
    p3 = np.zeros_like(p1) if drop_both else a * (1.0 - surv)
    tot = p1 + p2 + p3
    u = U * tot
    lab = np.where(u < p1, 1, np.where(u < p1 + p2, 2, 3))
    lab = np.where(C == 0, 1, lab)
    R[inf] = lab[inf]
    return R


# ---------------------------------------------------------------------------
# Sufficient statistics

@dataclass
class CountStatistics:
    """Per-person transition and source counts."""

    c00: np.ndarray
    c01: np.ndarray
    c10: np.ndarray
    c11: np.ndarray
    mode: str = RECEIVE
    # receive mode
    r13: np.ndarray = None      # R in {1, 3}
    r2: np.ndarray = None       # R == 2
    r23: np.ndarray = None      # R in {2, 3}
    r_not23: np.ndarray = None  # sum of C over R == 1 and 0->0 cells
    # transmit mode
    r0: np.ndarray = None       # own infections from outside
    r_not0: np.ndarray = None   # own infections from a contact
    r_is_n: np.ndarray = None   # infections this person caused
    r_not_n: np.ndarray = None  # exposures by this person that did not infect

    def pooled(self):
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, np.ndarray):
                out[k] = float(v.sum())
        return out

    def scaled(self, w):
        """All count arrays multiplied by ``w`` (for averaging samples)."""
        kw = {k: (v * w if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}
        return CountStatistics(**kw)

    def __add__(self, other):
        kw = {}
        for k, v in self.__dict__.items():
            kw[k] = v + getattr(other, k) if isinstance(v, np.ndarray) else v
        return CountStatistics(**kw)


def count_statistics(X, R, G, mode=RECEIVE):
    X = np.asarray(X)
    R = np.asarray(R)
    prev, nxt = X[:, :-1], X[:, 1:]
    s00 = (prev == 0) & (nxt == 0)
    s01 = (prev == 0) & (nxt == 1)
    defined = R != UNDEFINED
    if np.any(defined & ~s01):
        n, t = np.argwhere(defined & ~s01)[0]
        raise IntegrityError(f"source defined off a 0->1 transition at person {n}, transition {t}")
    if np.any(s01 & ~defined):
        n, t = np.argwhere(s01 & ~defined)[0]
        raise IntegrityError(f"0->1 transition without a source at person {n}, transition {t}")
    base = dict(c00=s00.sum(1), c01=s01.sum(1), c10=((prev == 1) & (nxt == 0)).sum(1),
                c11=((prev == 1) & (nxt == 1)).sum(1), mode=mode)
    C = exposure_counts(X, G)[:, 1:]
    if mode == RECEIVE:
        if np.any(defined & ~np.isin(R, (1, 2, 3))):
            raise IntegrityError("receive-mode source labels must be 1, 2 or 3")
        if np.any((R == 2) | (R == 3)) and np.any(((R == 2) | (R == 3)) & (C == 0)):
            raise IntegrityError("inside infection without infected contacts")
        return CountStatistics(
            **base,
            r13=((R == 1) | (R == 3)).sum(1), r2=(R == 2).sum(1), r23=((R == 2) | (R == 3)).sum(1),
            r_not23=(C * ((R == 1) | s00)).sum(1),
        )
    # transmit mode
    N = X.shape[0]
    A = G.adjacency[1:].astype(np.int64)      # (T, N, N); day t+1 drives column t
    src = R > 0
    if np.any(src):
        n_idx, t_idx = np.nonzero(src)
        m = R[src] - 1
        if np.any(m >= N) or not np.all(A[t_idx, n_idx, np.clip(m, 0, N - 1)] == 1) \
                or not np.all(X[np.clip(m, 0, N - 1), t_idx] == 1):
            raise IntegrityError("transmit-mode source is not an infected contact")
        r_is_n = np.bincount(m, minlength=N)
    else:
        r_is_n = np.zeros(N, dtype=np.int64)
    w = (s00 | (R == 0)).astype(np.int64)     # (N, T)
    # exposures of each infected person that did not end in an infection it caused
    r_not_n = (X[:, :-1] * np.einsum("tij,it->jt", A, w)).sum(1)
    return CountStatistics(**base, r0=(R == 0).sum(1), r_not0=src.sum(1), r_is_n=r_is_n, r_not_n=r_not_n)


def beta_shape_counts(counts):
    """Posterior count increments ``(6, N)`` in role order r1, r2, a1, a2, b1, b2."""
    c = counts
    if c.mode == RECEIVE:
        rows = [c.c10, c.c11, c.r13, c.r2 + c.c00, c.r23, c.r_not23]
    else:
        rows = [c.c10, c.c11, c.r0, c.r_not0 + c.c00, c.r_is_n, c.r_not_n]
    return np.vstack([np.asarray(r, dtype=float) for r in rows])


# ---------------------------------------------------------------------------
# Conditional draws

def sample_infection_params(counts, Z=None, eta=None, rng=None, hyper=None, homogeneous=False):
    """Draw ``(gamma, alpha, beta)`` per person from their beta full conditionals.

    In homogeneous mode counts pool over persons and ``hyper`` supplies the
    prior shapes. Otherwise shapes are ``exp(z . eta)`` from a beta-exp link;
    ``eta=None`` means all-zero coefficients, i.e. Beta(1, 1) priors.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    inc = beta_shape_counts(counts)
    N = inc.shape[1]
    if homogeneous:
        h = hyper or BetaHyperParams()
        prior = np.array([h.a_gamma, h.b_gamma, h.a_alpha, h.b_alpha, h.a_beta, h.b_beta])
        a = prior[0::2] + inc[0::2].sum(1)
        b = prior[1::2] + inc[1::2].sum(1)
        d = rng.beta(a, b)
        return np.full(N, d[0]), np.full(N, d[1]), np.full(N, d[2])
    if eta is None:
        shapes = np.ones((N, 6))
    else:
        Zv = Z.values if isinstance(Z, Covariates) else np.asarray(Z, dtype=float)
        shapes = beta_exp_shapes(Zv, eta)
    a = shapes[:, 0::2].T + inc[0::2]
    b = shapes[:, 1::2].T + inc[1::2]
    d = rng.beta(a, b)
    return d[0], d[1], d[2]


def sample_initial_rate(X, hyper, rng):
    h = hyper or BetaHyperParams()
    k = int(np.sum(np.asarray(X)[:, 0] == 1))
    N = np.asarray(X).shape[0]
    return rng.beta(h.a_pi + k, h.b_pi + N - k)


def emission_counts(X, Y):
    """``(ones, zeros)`` each of shape (2, S): observed y=1 / y=0 counts by state."""
    x = np.asarray(X)[:, 1:, None]
    obs = Y != MISSING
    ones = np.stack([((Y == 1) & (x == i)).sum((0, 1)) for i in (0, 1)])
    zeros = np.stack([((Y == 0) & (x == i) & obs).sum((0, 1)) for i in (0, 1)])
    return ones, zeros


def sample_emissions_and_impute(X, Y, hyper, rng):
    """Draw ``theta`` from observed cells, then fill MISSING cells from it."""
    h = hyper or BetaHyperParams()
    ones, zeros = emission_counts(X, Y)
    a = np.array([[h.a_0], [h.a_1]]) + ones
    b = np.array([[h.b_0], [h.b_1]]) + zeros
    theta = rng.beta(a, b)
    Yi = np.array(Y, dtype=np.int8)
    miss = Yi == MISSING
    p = theta[np.asarray(X)[:, 1:]]   # (N, T, S)
    U = rng.random(Yi.shape)
    Yi[miss] = (U < p)[miss]
    return theta, Yi


def log_evidence(Y, theta):
    """(N, T+1, 2) log-likelihood of observed symptoms under each state; column 0 is zero."""
    N, T, S = Y.shape
    ev = np.zeros((N, T + 1, 2))
    with np.errstate(divide="ignore"):
        lt, l1t = np.log(theta), np.log1p(-theta)
    for i in (0, 1):
        ev[:, 1:, i] = (np.where(Y == 1, lt[i], 0.0) + np.where(Y == 0, l1t[i], 0.0)).sum(2)
    return ev


def full_conditional(X, Y, params, G, n, t, interp=RECEIVE):
    """P(x[n, t] = 1 | everything else)."""
    X = np.ascontiguousarray(X, dtype=np.int8)
    ptr, idx = G.csr
    ev = log_evidence(np.asarray(Y), params.theta)
    l0, l1 = K.site_logp(X, ev, ptr, idx, params.gamma, params.alpha, params.beta, params.pi,
                         interp == TRANSMIT, n, t)
    return K.prob_one(l0, l1)


def sample_hidden_state(X, Y, params, G, n, t, rng, interp=RECEIVE):
    """Resample ``x[n, t]`` in place and return its new value."""
    p = full_conditional(X, Y, params, G, n, t, interp)
    X[n, t] = 1 if rng.random() < p else 0
    return int(X[n, t])


# ---------------------------------------------------------------------------
# Sampler

@dataclass
class GibbsConfig:
    iterations: int = 500
    burnin: int = None          # default: half of the iterations
    thin: int = 1
    interp: str = RECEIVE
    drop_both: bool = True
    homogeneous: bool = True
    link: LinkCoefficients = None   # heterogeneous priors; None means Beta(1, 1)
    hyper: BetaHyperParams = field(default_factory=BetaHyperParams)
    known_params: InfectionParams = None
    init_params: InfectionParams = None

    def __post_init__(self):
        if self.iterations < 2:
            raise DomainError("Gibbs sampling needs at least 2 iterations")
        if self.burnin is None:
            self.burnin = self.iterations // 2
        if not 0 <= self.burnin < self.iterations:
            raise DomainError("burn-in must lie in [0, iterations)")
        if self.thin < 1:
            raise DomainError("thin must be at least 1")
        if self.interp not in (RECEIVE, TRANSMIT):
            raise DomainError(f"unknown beta interpretation {self.interp!r}")


class GibbsSampler:
    """Owns the chain state ``(X, R, params)``; every call to :meth:`sweep` advances it once."""

    def __init__(self, Y, G, config=None, Z=None, rng=None):
        self.config = config or GibbsConfig()
        self.Y = check_symptoms(Y, G.num_nodes, G.num_days)
        self.G = G
        self.Z = Z
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        N, T, S = self.Y.shape
        self.N, self.T, self.S = N, T, S
        self.ptr, self.idx = G.csr
        self.link = self.config.link
        if self.config.known_params is not None:
            self.params = self.config.known_params.copy()
        elif self.config.init_params is not None:
            self.params = self.config.init_params.copy()
        else:
            self.params = neutral_params(N, S)
        self.X = np.zeros((N, T + 1), dtype=np.int8)
        self.R = np.full((N, T), UNDEFINED, dtype=np.int32)
        self.Y_imputed = self.Y.copy()
        self.num_sweeps = 0
        self.transmit = self.config.interp == TRANSMIT

    def set_link(self, link):
        self.link = link

    def counts(self):
        return count_statistics(self.X, self.R, self.G, self.config.interp)

    def _update_params(self):
        cfg = self.config
        if cfg.known_params is not None:
            return
        if self.link is not None and self.link.kind == SIGMOID:
            Zv = self.Z.values if isinstance(self.Z, Covariates) else np.asarray(self.Z, dtype=float)
            u = expit(Zv @ self.link.eta.T)
            g, a, b = u[:, 0], u[:, 1], u[:, 2]
        else:
            counts = self.counts()
            eta = self.link if self.link is not None and self.link.kind == BETA_EXP else None
            g, a, b = sample_infection_params(counts, self.Z, eta, self.rng, cfg.hyper,
                                              homogeneous=cfg.homogeneous and self.link is None)
        pi = sample_initial_rate(self.X, cfg.hyper, self.rng)
        ones, zeros = emission_counts(self.X, self.Y)
        h = cfg.hyper
        theta = self.rng.beta(np.array([[h.a_0], [h.a_1]]) + ones, np.array([[h.b_0], [h.b_1]]) + zeros)
        self.params = InfectionParams(g, a, b, pi, theta)

    def sweep(self):
        # the first sweep runs on the initial parameters so the all-zero start can move
        if self.num_sweeps > 0:
            self._update_params()
        p = self.params
        ev = log_evidence(self.Y, p.theta)
        U = self.rng.random((self.T + 1, self.N))
        K.x_sweep(self.X, ev, self.ptr, self.idx, p.gamma, p.alpha, p.beta, p.pi, self.transmit, U)
        self.R = sample_aux_source(self.X, p, self.G, self.rng, self.config.interp, self.config.drop_both)
        miss = self.Y == MISSING
        Yi = self.Y.copy()
        if miss.any():
            pr = p.theta[self.X[:, 1:]]
            Yi[miss] = (self.rng.random(self.Y.shape) < pr)[miss]
        self.Y_imputed = Yi
        self.num_sweeps += 1


@dataclass
class GibbsResult:
    posterior_x: np.ndarray         # (N, T+1) mean of post-burn-in states
    X_draws: list
    R_draws: list
    param_draws: list               # dicts per recorded sweep
    posterior_params: InfectionParams
    posterior_y: np.ndarray         # mean imputed symptoms (observed cells stay exact)
    final_X: np.ndarray
    final_R: np.ndarray
    sampler: GibbsSampler = None


def _mean_params(draws):
    keys = ("gamma", "alpha", "beta", "pi", "theta")
    m = {k: np.mean([d[k] for d in draws], axis=0) for k in keys}
    return InfectionParams(m["gamma"], m["alpha"], m["beta"], float(m["pi"]), m["theta"])


def run_gibbs(Y, G, Z=None, config=None, rng=None, sampler=None):
    """Run ``config.iterations`` sweeps and summarize the post-burn-in draws."""
    cfg = config or GibbsConfig()
    s = sampler or GibbsSampler(Y, G, cfg, Z, rng)
    xsum = np.zeros((s.N, s.T + 1))
    ysum = np.zeros(s.Y.shape)
    X_draws, R_draws, param_draws = [], [], []
    kept = 0
    for j in range(1, cfg.iterations + 1):
        s.sweep()
        if j <= cfg.burnin:
            continue
        kept += 1
        xsum += s.X
        ysum += s.Y_imputed
        p = s.params
        param_draws.append({"gamma": p.gamma.copy(), "alpha": p.alpha.copy(), "beta": p.beta.copy(),
                            "pi": p.pi, "theta": p.theta.copy()})
        R_draws.append(s.R.copy())
        if (j - cfg.burnin) % cfg.thin == 0:
            X_draws.append(s.X.copy())
    if not param_draws:
        warnings.warn("no post-burn-in samples kept", stacklevel=2)
    return GibbsResult(
        posterior_x=xsum / kept, X_draws=X_draws, R_draws=R_draws, param_draws=param_draws,
        posterior_params=_mean_params(param_draws), posterior_y=ysum / kept,
        final_X=s.X.copy(), final_R=s.R.copy(), sampler=s,
    )
