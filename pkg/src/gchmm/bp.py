"""Loopy belief propagation on the unrolled graph-coupled HMM.

Every hidden variable ``x[n, t]`` with ``t >= 1`` has one transition factor
whose parents are ``x[n, t-1]`` and ``x[j, t-1]`` for the contacts ``j`` of
``n`` on day ``t``. Messages live on parent edges of these factors:

* ``piE[e]``: variable-to-factor message from the parent of edge ``e``;
* ``lamE[e]``: factor-to-variable message back to that parent;
* ``piF[v]``: factor-to-child message into ``v`` (the prior for ``t = 0``).

Updates are synchronous: each sweep reads only the previous sweep's messages.
Sum-product uses a closed form for the noisy-or factor. Max-product
enumerates parent configurations per factor.
"""

from dataclasses import dataclass

import numpy as np

from .data import MISSING, check_symptoms
from .errors import DomainError, NumericalError
from .model import RECEIVE, TRANSMIT, InfectionParams

TINY = 1e-300


@dataclass
class FactorGraph:
    N: int
    T: int
    S: int
    params: InfectionParams
    interp: str
    # parent edges
    e_fac: np.ndarray      # factor index n*T + (t-1)
    e_parent: np.ndarray   # parent variable index m*(T+1) + (t-1)
    e_own: np.ndarray      # True for the x[n, t-1] edge
    e_q: np.ndarray        # 1 - effective beta of a neighbour edge (1 for own edges)
    own_edge: np.ndarray   # (N*T,) edge index of each factor's own edge
    f_child: np.ndarray    # (N*T,) child variable of each factor
    f_alpha: np.ndarray
    f_gamma: np.ndarray
    logev: np.ndarray      # (V, 2) log emission likelihood per variable
    Y: np.ndarray

    @property
    def num_vars(self):
        return self.N * (self.T + 1)

    @property
    def num_transition_factors(self):
        return self.N * self.T

    @property
    def num_emission_factors(self):
        return self.N * self.T * self.S

    def var(self, n, t):
        return n * (self.T + 1) + t

    def factor(self, n, t):
        if not (0 <= n < self.N and 1 <= t <= self.T):
            raise DomainError(f"no transition factor for ({n}, {t})")
        return n * self.T + (t - 1)

    def factor_edges(self, n, t):
        return np.flatnonzero(self.e_fac == self.factor(n, t))

    def parents(self, n, t):
        """Persons whose day ``t-1`` state feeds the factor of ``x[n, t]``."""
        return sorted(int(p) // (self.T + 1) for p in self.e_parent[self.factor_edges(n, t)])

    def emission_message(self, n, t, s):
        """Message from the emission factor of ``y[n, t, s]`` to ``x[n, t]`` (t >= 1)."""
        y = self.Y[n, t - 1, s]
        if y == MISSING:
            return np.ones(2)
        th = self.params.theta[:, s]
        return th if y == 1 else 1.0 - th


def evidence_indicator(y):
    """Message from an observed symptom node: ``(I[y=0], I[y=1])``; MISSING gives ones."""
    if y == MISSING:
        return np.ones(2)
    return np.array([y == 0, y == 1], dtype=float)


def _log_evidence(Y, theta, N, T):
    logev = np.zeros((N, T + 1, 2))
    if Y is None:
        return logev.reshape(-1, 2)
    obs = Y != MISSING
    y1 = (Y == 1) & obs
    y0 = (Y == 0) & obs
    with np.errstate(divide="ignore"):
        lt = np.log(theta)          # (2, S)
        l1t = np.log1p(-theta)
    for i in (0, 1):
        # 0 * -inf would give nan, so mask explicitly
        a = np.where(y1, lt[i][None, None, :], 0.0)
        b = np.where(y0, l1t[i][None, None, :], 0.0)
        logev[:, 1:, i] = (a + b).sum(axis=2)
    return logev.reshape(-1, 2)


def build_factor_graph(G, params, dims=None, Y=None, interp=RECEIVE):
    """Unroll the model over ``G`` with parameters ``params`` and evidence ``Y``."""
    if interp not in (RECEIVE, TRANSMIT):
        raise DomainError(f"unknown beta interpretation {interp!r}")
    N, T = G.num_nodes, G.num_days
    S = params.S
    if dims is not None and (dims.N, dims.T, dims.S) != (N, T, S):
        raise DomainError("dimensions disagree with network/parameters")
    if params.N != N:
        raise DomainError("parameter rows do not match person count")
    if Y is not None:
        Y = check_symptoms(Y, N, T)
        if Y.shape[2] != S:
            raise DomainError("symptom count disagrees with theta")
    ptr, idx = G.csr
    n_ids = np.arange(N)
    fac, par, own, q = [], [], [], []
    for t in range(1, T + 1):
        fac.append(n_ids * T + t - 1)
        par.append(n_ids * (T + 1) + t - 1)
        own.append(np.ones(N, dtype=bool))
        q.append(np.ones(N))
    for t in range(1, T + 1):
        deg = np.diff(ptr[t])
        child = np.repeat(n_ids, deg)
        nb = idx[ptr[t, 0]:ptr[t, N]]
        fac.append(child * T + t - 1)
        par.append(nb * (T + 1) + t - 1)
        own.append(np.zeros(len(nb), dtype=bool))
        b = params.beta[child] if interp == RECEIVE else params.beta[nb]
        q.append(1.0 - b)
    e_fac = np.concatenate(fac).astype(np.int64)
    e_parent = np.concatenate(par).astype(np.int64)
    e_own = np.concatenate(own)
    e_q = np.concatenate(q)
    own_edge = np.empty(N * T, dtype=np.int64)
    own_edge[e_fac[e_own]] = np.flatnonzero(e_own)
    f_n = np.arange(N * T) // T
    f_t = np.arange(N * T) % T + 1
    return FactorGraph(
        N=N, T=T, S=S, params=params, interp=interp,
        e_fac=e_fac, e_parent=e_parent, e_own=e_own, e_q=e_q, own_edge=own_edge,
        f_child=f_n * (T + 1) + f_t, f_alpha=params.alpha[f_n], f_gamma=params.gamma[f_n],
        logev=_log_evidence(Y, params.theta, N, T), Y=Y,
    )


@dataclass
class MessageStore:
    piE: np.ndarray
    lamE: np.ndarray
    piF: np.ndarray
    bel: np.ndarray = None


def init_messages(graph):
    """All messages set to ones; root variables carry the prior ``(1-pi, pi)``."""
    E = len(graph.e_fac)
    piF = np.ones((graph.N, graph.T + 1, 2))
    piF[:, 0] = (1.0 - graph.params.pi, graph.params.pi)
    return MessageStore(np.ones((E, 2)), np.ones((E, 2)), piF.reshape(-1, 2))


def _normalize(M, what):
    with np.errstate(invalid="ignore", divide="ignore"):
        out = M / M.sum(axis=-1, keepdims=True)
    if not np.all(np.isfinite(out)):
        bad = int(np.argwhere(~np.isfinite(out))[0][0])
        raise NumericalError(f"non-finite {what} message at row {bad}")
    return out


def _log_normalize(L):
    m = L.max(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):
        P = np.exp(L - m)
    return P / P.sum(axis=-1, keepdims=True)


def _safe_log(M):
    z = M <= TINY
    with np.errstate(divide="ignore"):
        return np.where(z, 0.0, np.log(np.where(z, 1.0, M))), z


def _lambda_totals(graph, lamE):
    """Per variable and state: sum of log incoming lambdas and the number of zero lambdas."""
    V = graph.num_vars
    ll, z = _safe_log(lamE)
    Ls = np.stack([np.bincount(graph.e_parent, ll[:, k], minlength=V) for k in (0, 1)], axis=1)
    Zc = np.stack([np.bincount(graph.e_parent, z[:, k], minlength=V) for k in (0, 1)], axis=1)
    return Ls, Zc


def _variable_side(graph, store):
    """Beliefs, outgoing pi messages and child lambda inputs from the current store."""
    Ls, Zc = _lambda_totals(graph, store.lamE)
    with np.errstate(divide="ignore"):
        base = np.log(store.piF) + graph.logev
    logb = np.where(Zc > 0, -np.inf, base + Ls)
    bel = _log_normalize(logb)
    ll, z = _safe_log(store.lamE)
    p = graph.e_parent
    lp = base[p] + Ls[p] - ll
    lp = np.where(Zc[p] - z > 0, -np.inf, lp)
    piE = _log_normalize(lp)
    lin = _log_normalize(np.where(Zc > 0, -np.inf, graph.logev + Ls))
    for what, M in (("belief", bel), ("pi", piE), ("lambda-in", lin)):
        if not np.all(np.isfinite(M)):
            r = int(np.argwhere(~np.isfinite(M))[0][0])
            if what == "pi":
                r = int(p[r])
            n, t = divmod(r, graph.T + 1)
            raise NumericalError(f"non-finite {what} message at person {n}, day {t} "
                                 "(contradictory evidence or degenerate parameters)")
    return bel, piE, lin


def _factor_side_sum(graph, piE, lin):
    """Closed-form sum-product messages out of every transition factor."""
    F = graph.num_transition_factors
    nb = ~graph.e_own
    A = piE[nb, 0] + piE[nb, 1] * graph.e_q[nb]
    lA, zA = _safe_log(A)
    fac_nb = graph.e_fac[nb]
    LA = np.bincount(fac_nb, lA, minlength=F)
    ZA = np.bincount(fac_nb, zA, minlength=F)
    PA = np.where(ZA > 0, 0.0, np.exp(LA))
    s = (1.0 - graph.f_alpha) * PA
    g = graph.f_gamma
    po = piE[graph.own_edge]
    lam = lin[graph.f_child]
    l0, l1 = lam[:, 0], lam[:, 1]

    piF_new = np.empty((F, 2))
    piF_new[:, 0] = po[:, 1] * g + po[:, 0] * s
    piF_new[:, 1] = po[:, 1] * (1.0 - g) + po[:, 0] * (1.0 - s)

    lamE = np.empty_like(piE)
    own_out = l0 * g + l1 * (1.0 - g)
    lamE[graph.own_edge, 0] = l1 + (l0 - l1) * s
    lamE[graph.own_edge, 1] = own_out
    # neighbour edges: product over the other neighbours
    f = fac_nb
    PAex = np.where(ZA[f] - zA > 0, 0.0, np.exp(LA[f] - lA))
    r = po[f, 1] * own_out[f]
    base = (1.0 - graph.f_alpha[f]) * PAex
    lamE[nb, 0] = r + po[f, 0] * (l1[f] + (l0[f] - l1[f]) * base)
    lamE[nb, 1] = r + po[f, 0] * (l1[f] + (l0[f] - l1[f]) * base * graph.e_q[nb])
    return _normalize(lamE, "lambda"), _normalize(piF_new, "pi")


def _factor_groups(graph):
    """Factors grouped by neighbour count: ``{d: (factors, edge matrix (G, d+1))}``."""
    cache = getattr(graph, "_groups", None)
    if cache is not None:
        return cache
    order = np.lexsort((graph.e_own.astype(np.int8) * -1, graph.e_fac))  # own edge first
    fac_sorted = graph.e_fac[order]
    counts = np.bincount(graph.e_fac, minlength=graph.num_transition_factors)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    groups = {}
    for d1 in np.unique(counts):
        fs = np.flatnonzero(counts == d1)
        Em = order[starts[fs][:, None] + np.arange(d1)[None, :]]
        assert np.all(fac_sorted[starts[fs]] == fs)
        groups[int(d1) - 1] = (fs, Em)
    graph._groups = groups
    return groups


def _factor_side_generic(graph, piE, lin, semiring):
    """Enumerate parent configurations; ``semiring`` is ``"sum"`` or ``"max"``."""
    red = np.sum if semiring == "sum" else np.max
    F = graph.num_transition_factors
    lamE = np.empty_like(piE)
    piF_new = np.empty((F, 2))
    for d, (fs, Em) in _factor_groups(graph).items():
        k = d + 1
        C = 1 << k
        bits = (np.arange(C)[:, None] >> np.arange(k)[None, :]) & 1   # (C, k)
        q = graph.e_q[Em[:, 1:]]                                       # (G, d)
        # survival product over infected neighbours for each config
        surv = np.prod(np.where(bits[None, :, 1:] == 1, q[:, None, :], 1.0), axis=2)  # (G, C)
        T0 = np.where(bits[None, :, 0] == 1, graph.f_gamma[fs][:, None],
                      (1.0 - graph.f_alpha[fs])[:, None] * surv)
        T1 = 1.0 - T0
        P = piE[Em]                                                    # (G, k, 2)
        W = np.take_along_axis(P, np.broadcast_to(bits.T[None], (len(fs), k, C)), axis=2)  # (G, k, C)
        ones = np.ones((len(fs), 1, C))
        pre = np.cumprod(np.concatenate([ones, W[:, :-1]], axis=1), axis=1)
        suf = np.cumprod(np.concatenate([ones, W[:, :0:-1]], axis=1), axis=1)[:, ::-1]
        Wex = pre * suf                                                # product over k' != k
        Wall = pre[:, -1] * W[:, -1]
        piF_new[fs, 0] = red(T0 * Wall, axis=1)
        piF_new[fs, 1] = red(T1 * Wall, axis=1)
        lam = lin[graph.f_child[fs]]
        if semiring == "sum":
            Mx = lam[:, 0:1] * T0 + lam[:, 1:2] * T1
        else:
            Mx = np.maximum(lam[:, 0:1] * T0, lam[:, 1:2] * T1)
        contrib = Mx[:, None, :] * Wex                                 # (G, k, C)
        for v in (0, 1):
            mask = (bits.T == v)[None]                                 # (1, k, C)
            lamE[Em, v] = red(np.where(mask, contrib, -np.inf if semiring == "max" else 0.0), axis=2)
    return _normalize(lamE, "lambda"), _normalize(piF_new, "pi")


def _set_piF(graph, store, piF_new):
    store.piF[graph.f_child] = piF_new


@dataclass
class BPResult:
    beliefs: np.ndarray     # (N, T+1, 2)
    converged: bool
    sweeps: int
    store: MessageStore

    @property
    def marginals(self):
        """P(x[n, t] = 1) as an (N, T+1) array."""
        return self.beliefs[..., 1]


def _run(graph, semiring, max_sweeps, tol, store):
    if max_sweeps < 1:
        raise DomainError("max_sweeps must be at least 1")
    store = init_messages(graph) if store is None else store
    bel, piE, lin = _variable_side(graph, store)
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        if semiring == "sum":
            lamE, piF_new = _factor_side_sum(graph, piE, lin)
        else:
            lamE, piF_new = _factor_side_generic(graph, piE, lin, semiring.split("-")[0])
        store.lamE = lamE
        store.piE = piE
        _set_piF(graph, store, piF_new)
        new_bel, piE, lin = _variable_side(graph, store)
        delta = np.max(np.abs(new_bel - bel))
        bel = new_bel
        if delta < tol:
            converged = True
            break
    store.piE = piE
    store.bel = bel
    return BPResult(bel.reshape(graph.N, graph.T + 1, 2), converged, sweeps, store)


def run_forward_backward(graph, max_sweeps=50, tol=1e-6, store=None, generic=False):
    """Sum-product beliefs for every hidden variable.

    ``store`` warm-starts from earlier messages. ``generic=True`` uses the
    enumeration kernel instead of the closed form (for cross-checks).
    """
    return _run(graph, "sum-generic" if generic else "sum", max_sweeps, tol, store)


def viterbi(graph, max_sweeps=50, tol=1e-6):
    """Max-product decode; ties go to state 0."""
    res = _run(graph, "max", max_sweeps, tol, None)
    b = res.beliefs
    return (b[..., 1] - b[..., 0] > 1e-12).astype(np.int8)


def update_lambda(store, graph, n, t):
    """Messages from the factor of ``x[n, t]`` to each parent, keyed by parent person."""
    _, piE, lin = _variable_side(graph, store)
    lamE, _ = _factor_side_sum(graph, piE, lin)
    out = {}
    for e in graph.factor_edges(n, t):
        out[int(graph.e_parent[e]) // (graph.T + 1)] = lamE[e]
    return out


def update_pi(store, graph, n, t):
    """Messages from ``x[n, t]`` to each child factor, keyed by the child's person.

    Each equals the belief divided by the λ coming back from that factor,
    renormalized. The last day has no child factors.
    """
    _, piE, _ = _variable_side(graph, store)
    v = graph.var(n, t)
    out = {}
    for e in np.flatnonzero(graph.e_parent == v):
        out[int(graph.e_fac[e]) // graph.T] = piE[e]
    return out


def root_prior(graph):
    return np.array([1.0 - graph.params.pi, graph.params.pi])


__all__ = [
    "FactorGraph", "MessageStore", "BPResult", "build_factor_graph", "init_messages",
    "evidence_indicator", "update_lambda", "update_pi", "run_forward_backward", "viterbi",
    "root_prior",
]
