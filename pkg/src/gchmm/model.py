"""Generative model: parameters, link functions, transitions and simulation."""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .data import MISSING, Covariates, DynamicNetwork, ProblemDims
from .errors import DomainError, NumericalError

RECEIVE = "receive"
TRANSMIT = "transmit"
SIGMOID = "sigmoid"
BETA_EXP = "beta-exp"
FIXED = "fixed"

# Largest exponent accepted for exp(z.eta) shape parameters.
MAX_LOG_SHAPE = 700.0


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass
class InfectionParams:
    """Per-person ``gamma, alpha, beta`` plus global ``pi`` and emission ``theta`` (2, S).

    Row 0 of ``theta`` holds P(y=1 | x=0), row 1 holds P(y=1 | x=1).
    """

    gamma: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    pi: float
    theta: np.ndarray

    def __post_init__(self):
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.ndim == 1:
            self.theta = self.theta.reshape(2, -1)
        self.pi = float(self.pi)
        n = {len(self.gamma), len(self.alpha), len(self.beta)}
        if len(n) != 1:
            raise DomainError("gamma, alpha and beta must have one entry per person")
        if self.theta.ndim != 2 or self.theta.shape[0] != 2:
            raise DomainError("theta must have shape (2, S)")
        for name in ("gamma", "alpha", "beta", "theta"):
            v = getattr(self, name)
            if not np.all((v >= 0) & (v <= 1)):
                raise DomainError(f"{name} outside [0, 1]")
        if not 0 <= self.pi <= 1:
            raise DomainError("pi outside [0, 1]")

    @classmethod
    def homogeneous(cls, N, gamma, alpha, beta, pi, theta):
        full = lambda v: np.full(N, float(v))  # noqa: E731
        return cls(full(gamma), full(alpha), full(beta), pi, theta)

    @property
    def N(self):
        return len(self.gamma)

    @property
    def S(self):
        return self.theta.shape[1]

    def is_homogeneous(self):
        return all(np.all(v == v[0]) for v in (self.gamma, self.alpha, self.beta))

    def scalars(self):
        """``(gamma, alpha, beta)`` of the first person, for homogeneous models."""
        return float(self.gamma[0]), float(self.alpha[0]), float(self.beta[0])

    def copy(self):
        return InfectionParams(self.gamma.copy(), self.alpha.copy(), self.beta.copy(),
                               self.pi, self.theta.copy())

    def to_json(self):
        return {"gamma": self.gamma.tolist(), "alpha": self.alpha.tolist(),
                "beta": self.beta.tolist(), "pi": self.pi, "theta": self.theta.tolist()}

    @classmethod
    def from_json(cls, obj, N=None):
        """Scalars for gamma/alpha/beta are broadcast to ``N`` people."""
        try:
            vals = {k: obj[k] for k in ("gamma", "alpha", "beta", "pi", "theta")}
        except KeyError as exc:
            raise DomainError(f"parameter file lacks {exc.args[0]!r}") from None
        for k in ("gamma", "alpha", "beta"):
            if np.ndim(vals[k]) == 0:
                if N is None:
                    raise DomainError(f"scalar {k} needs a person count")
                vals[k] = np.full(N, float(vals[k]))
            elif N is not None and len(vals[k]) != N:
                raise DomainError(f"{k} has {len(vals[k])} entries for {N} people")
        return cls(**vals)


SIGMOID_ROLES = ("r", "a", "b")
BETA_EXP_ROLES = ("r1", "r2", "a1", "a2", "b1", "b2")


@dataclass
class LinkCoefficients:
    """Covariate-to-parameter regression coefficients with a Gaussian prior.

    ``eta`` has one row per role: ``r, a, b`` for the sigmoid link and
    ``r1, r2, a1, a2, b1, b2`` for the beta-exponential link.
    """

    eta: np.ndarray
    kind: str = SIGMOID
    mu: np.ndarray = None
    Sigma: np.ndarray = None

    def __post_init__(self):
        if self.kind not in (SIGMOID, BETA_EXP):
            raise DomainError(f"unknown link {self.kind!r}")
        self.eta = np.array(self.eta, dtype=float)
        rows = len(self.roles)
        if self.eta.ndim == 1 and self.eta.size % rows == 0:
            self.eta = self.eta.reshape(rows, -1)
        if self.eta.ndim != 2 or self.eta.shape[0] != rows:
            raise DomainError(f"{self.kind} link needs {rows} coefficient vectors")
        K = self.eta.shape[1]
        self.mu = np.zeros(K) if self.mu is None else np.asarray(self.mu, dtype=float)
        self.Sigma = 10.0 * np.eye(K) if self.Sigma is None else np.asarray(self.Sigma, dtype=float)
        if self.mu.shape != (K,) or self.Sigma.shape != (K, K):
            raise DomainError("prior mean/covariance dimension mismatch")
        if not np.allclose(self.Sigma, self.Sigma.T):
            raise DomainError("prior covariance must be symmetric")
        try:
            np.linalg.cholesky(self.Sigma)
        except np.linalg.LinAlgError:
            raise DomainError("prior covariance must be positive definite") from None

    @property
    def roles(self):
        return SIGMOID_ROLES if self.kind == SIGMOID else BETA_EXP_ROLES

    @property
    def K(self):
        return self.eta.shape[1]

    @classmethod
    def zeros(cls, K, kind=SIGMOID, mu=None, Sigma=None):
        rows = len(SIGMOID_ROLES if kind == SIGMOID else BETA_EXP_ROLES)
        return cls(np.zeros((rows, K)), kind, mu, Sigma)

    def with_eta(self, eta):
        return LinkCoefficients(np.asarray(eta).reshape(self.eta.shape), self.kind, self.mu, self.Sigma)

    def to_json(self, feature_names=None):
        names = list(feature_names) if feature_names is not None else [f"z{k}" for k in range(self.K)]
        return {"link": self.kind,
                "eta": {role: dict(zip(names, map(float, row))) for role, row in zip(self.roles, self.eta)}}

    @classmethod
    def from_json(cls, obj, feature_names=None):
        kind = obj.get("link", SIGMOID)
        roles = SIGMOID_ROLES if kind == SIGMOID else BETA_EXP_ROLES
        rows = []
        for role in roles:
            entry = obj["eta"][role]
            if isinstance(entry, dict):
                keys = feature_names if feature_names is not None else list(entry)
                rows.append([entry[k] for k in keys])
            else:
                rows.append(entry)
        return cls(np.asarray(rows, dtype=float), kind)


@dataclass
class SimConfig:
    """Simulation switches. ``pi`` and ``theta`` are used when parameters come from a link."""

    link: str = SIGMOID
    interp: str = RECEIVE
    p_miss: float = 0.0
    seed: int = 0
    pi: float = 0.1
    theta: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.link not in (SIGMOID, BETA_EXP, FIXED):
            raise DomainError(f"unknown link {self.link!r}")
        if self.interp not in (RECEIVE, TRANSMIT):
            raise DomainError(f"unknown beta interpretation {self.interp!r}")
        if not 0 <= self.p_miss <= 1:
            raise DomainError("p_miss must lie in [0, 1]")


def _check_state(s):
    if s not in (0, 1):
        raise DomainError(f"state {s!r} not in {{0, 1}}")


def transition_prob(prev, nxt, gamma, alpha, beta=0.0, C=0, neighbor_betas=None):
    """P(x_t = nxt | x_{t-1} = prev) for one person.

    Receive mode uses the count ``C`` of infected contacts with a common
    ``beta``. Passing ``neighbor_betas`` (the betas of infected contacts)
    switches to transmit mode.
    """
    _check_state(prev)
    _check_state(nxt)
    if prev == 1:
        return gamma if nxt == 0 else 1.0 - gamma
    if neighbor_betas is None:
        stay = (1.0 - alpha) * (1.0 - beta) ** C
    else:
        stay = (1.0 - alpha) * float(np.prod(1.0 - np.asarray(neighbor_betas, dtype=float)))
    return stay if nxt == 0 else 1.0 - stay


def infection_probability(alpha, beta=0.0, C=0, neighbor_betas=None):
    """Probability that a susceptible person becomes infected."""
    return transition_prob(0, 1, 0.0, alpha, beta, C, neighbor_betas)


def _linear(z, eta):
    z = np.asarray(z, dtype=float)
    E = eta.eta if isinstance(eta, LinkCoefficients) else np.asarray(eta, dtype=float)
    if z.shape[-1] != E.shape[-1]:
        raise DomainError(f"covariate length {z.shape[-1]} != coefficient length {E.shape[-1]}")
    return z @ E.T


def sigmoid_link(z, eta):
    """``(gamma, alpha, beta)`` as logistic functions of ``z . eta``.

    ``z`` may be a single covariate vector or an (N, K) matrix.
    """
    if isinstance(z, Covariates):
        z = z.values
    u = expit(_linear(z, eta))
    return u[..., 0], u[..., 1], u[..., 2]


def beta_exp_shapes(z, eta):
    """Beta shape parameters ``exp(z . eta)``, one column per beta-exp role."""
    if isinstance(z, Covariates):
        z = z.values
    u = _linear(z, eta)
    if np.any(u > MAX_LOG_SHAPE):
        raise NumericalError("exp(z.eta) overflows; rescale the covariates")
    return np.exp(u)


def beta_exp_link_draw(z, eta, rng):
    """Draw ``(gamma, alpha, beta)`` from Beta(exp(z.eta_1), exp(z.eta_2)) per role."""
    rng = _as_rng(rng)
    A = beta_exp_shapes(z, eta)
    out = rng.beta(A[..., 0::2], A[..., 1::2])
    return out[..., 0], out[..., 1], out[..., 2]


def beta_exp_mean(z, eta):
    """Prior mean of each parameter under the beta-exp link: sigma(u1 - u2)."""
    if isinstance(z, Covariates):
        z = z.values
    u = _linear(z, eta)
    m = expit(u[..., 0::2] - u[..., 1::2])
    return m[..., 0], m[..., 1], m[..., 2]


def transition_matrix_step(x_prev, G, t, params, interp=RECEIVE):
    """P(x_t = 1 | x_{t-1}) for every person on day ``t``."""
    A = G.adjacency[t]
    x_prev = np.asarray(x_prev)
    if interp == RECEIVE:
        C = A.astype(np.int64) @ x_prev.astype(np.int64)
        stay = (1.0 - params.alpha) * (1.0 - params.beta) ** C
    else:
        q = np.where(x_prev == 1, 1.0 - params.beta, 1.0)
        stay = (1.0 - params.alpha) * np.prod(np.where(A, q[None, :], 1.0), axis=1)
    return np.where(x_prev == 1, 1.0 - params.gamma, 1.0 - stay)


def mask_missing(Y, p_miss, rng):
    """Independently replace observed cells by MISSING with probability ``p_miss``."""
    if not 0 <= p_miss <= 1:
        raise DomainError("p_miss must lie in [0, 1]")
    rng = _as_rng(rng)
    Y = np.array(Y, dtype=np.int8)
    Y[rng.random(Y.shape) < p_miss] = MISSING
    return Y


def simulate(dims, G, Z, source, config, rng=None):
    """Draw ``(X, Y, params)`` from the generative model.

    ``source`` is either an :class:`InfectionParams` (fixed parameters) or a
    :class:`LinkCoefficients`. Randomness comes from one substream per person
    spawned from ``config.seed`` (or ``rng`` if given as a SeedSequence/int),
    so adding people leaves existing trajectories' draws untouched.
    """
    N, T, S = dims.N, dims.T, dims.S
    if G.num_nodes != N or G.num_days != T:
        raise DomainError("network does not match dimensions")
    if Z is not None:
        Zv = Z.values if isinstance(Z, Covariates) else np.asarray(Z, dtype=float)
        if Zv.shape[0] != N:
            raise DomainError("covariates do not match person count")
    root = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(
        config.seed if rng is None else rng)
    streams = [np.random.default_rng(s) for s in root.spawn(N)]

    if isinstance(source, InfectionParams):
        params = source
        if params.N != N or params.S != S:
            raise DomainError("parameters do not match dimensions")
    else:
        if Z is None:
            raise DomainError("a link needs covariates")
        if source.kind == BETA_EXP:
            warnings.warn("beta-exponential ground truth: realized parameters differ from the link's "
                          "expectation", stacklevel=2)
            shapes = beta_exp_shapes(Zv, source)
            draws = np.array([streams[n].beta(shapes[n, 0::2], shapes[n, 1::2]) for n in range(N)])
            g, a, b = draws[:, 0], draws[:, 1], draws[:, 2]
        else:
            g, a, b = sigmoid_link(Zv, source)
        theta = config.theta if config.theta is not None else default_theta(S)
        params = InfectionParams(g, a, b, config.pi, theta)

    # fixed per-person draw layout: init, transitions, emissions, missingness
    U0 = np.empty(N)
    UX = np.empty((N, T))
    UY = np.empty((N, T, S))
    UM = np.empty((N, T, S))
    for n, g in enumerate(streams):
        U0[n] = g.random()
        UX[n] = g.random(T)
        UY[n] = g.random((T, S))
        UM[n] = g.random((T, S))

    X = np.zeros((N, T + 1), dtype=np.int8)
    X[:, 0] = U0 < params.pi
    for t in range(1, T + 1):
        p1 = transition_matrix_step(X[:, t - 1], G, t, params, config.interp)
        X[:, t] = UX[:, t - 1] < p1
    p_y = params.theta[X[:, 1:]]  # (N, T, S)
    Y = (UY < p_y).astype(np.int8)
    if config.p_miss > 0:
        Y[UM < config.p_miss] = MISSING
    return X, Y, params


# ---------------------------------------------------------------------------
# Semi-synthetic instances

def default_theta(S=6):
    """Emission table with low false-positive and high true-positive rates."""
    th0 = np.array([0.08, 0.05, 0.10, 0.03, 0.06, 0.10])
    th1 = np.array([0.80, 0.70, 0.75, 0.60, 0.65, 0.50])
    reps = -(-S // 6)
    return np.vstack([np.tile(th0, reps)[:S], np.tile(th1, reps)[:S]])


def default_eta(K=5):
    """Ground-truth sigmoid coefficients: intercepts for gamma, alpha, beta plus feature effects."""
    slopes = np.array([[0.4, -0.3, 0.2, -0.5],
                       [0.3, 0.2, -0.4, 0.2],
                       [-0.3, 0.4, 0.3, -0.2]])
    eta = np.zeros((3, K))
    eta[:, 0] = logit([0.25, 0.01, 0.08])
    reps = -(-(K - 1) // 4) if K > 1 else 0
    eta[:, 1:] = np.tile(slopes, (1, max(reps, 1)))[:, :K - 1]
    return LinkCoefficients(eta, SIGMOID)


def synthetic_covariates(N, num_features=4, rng=None):
    rng = _as_rng(rng)
    return Covariates.from_features(rng.standard_normal((N, num_features)))


def synthetic_network(N, T, max_degree=11, attach=2, keep=0.7, rng=None):
    """Scale-free contact structure with day-to-day edge dropout.

    A preferential-attachment base graph is thinned until every degree is at
    most ``max_degree``; each day keeps every base edge independently with
    probability ``keep``.
    """
    import networkx as nx

    rng = _as_rng(rng)
    base = nx.barabasi_albert_graph(N, min(attach, N - 1), seed=int(rng.integers(2**31)))
    while True:
        deg = dict(base.degree())
        worst = max(deg, key=lambda v: (deg[v], -v))
        if deg[worst] <= max_degree:
            break
        nbrs = sorted(base.neighbors(worst))
        base.remove_edge(worst, nbrs[int(rng.integers(len(nbrs)))])
    edges = np.array(sorted(base.edges()), dtype=np.int64).reshape(-1, 2)
    days = [edges[rng.random(len(edges)) < keep] for _ in range(T)]
    return DynamicNetwork(N, days, max_degree=max_degree)


@dataclass
class SyntheticInstance:
    dims: ProblemDims
    G: DynamicNetwork
    Z: Covariates
    eta: LinkCoefficients
    params: InfectionParams
    X: np.ndarray
    Y: np.ndarray
    Y_full: np.ndarray


def beta_exp_from_sigmoid(link, concentration=20.0):
    """Beta-exp coefficients whose parameter means equal the sigmoid link's values.

    Every second shape is ``concentration`` for all people, the first is
    ``concentration * exp(z.eta_sigmoid)``.
    """
    eta = np.zeros((6, link.K))
    eta[1::2, 0] = np.log(concentration)
    eta[0::2] = link.eta + eta[1::2]
    return LinkCoefficients(eta, BETA_EXP)


def semi_synthetic(seed, N=84, T=107, S=6, num_features=4, max_degree=11, p_miss=0.0,
                   interp=RECEIVE, eta=None, pi=0.1, link=SIGMOID):
    """Link-generated instance on a synthetic scale-free dynamic network.

    Without ``eta`` the default sigmoid coefficients are used, converted to
    matching beta-exp coefficients when ``link`` is beta-exp.
    """
    ss = np.random.SeedSequence(seed)
    s_net, s_cov, s_sim, s_miss = ss.spawn(4)
    G = synthetic_network(N, T, max_degree, rng=np.random.default_rng(s_net))
    Z = synthetic_covariates(N, num_features, np.random.default_rng(s_cov))
    if eta is None:
        eta = default_eta(num_features + 1)
        if link == BETA_EXP:
            eta = beta_exp_from_sigmoid(eta)
    dims = ProblemDims(N, T, S, num_features + 1, max_degree)
    cfg = SimConfig(eta.kind, interp, 0.0, pi=pi, theta=default_theta(S))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        X, Y, params = simulate(dims, G, Z, eta, cfg, rng=s_sim)
    Ym = mask_missing(Y, p_miss, np.random.default_rng(s_miss)) if p_miss > 0 else Y.copy()
    return SyntheticInstance(dims, G, Z, eta, params, X, Ym, Y)
