"""Core containers and helpers shared by the simulation and inference code.

Conventions used throughout the package:

* People are indexed ``0..N-1`` internally. External ids are strings and
  are mapped through :class:`PersonIndex`.
* Hidden states ``X`` form an ``int8`` array of shape ``(N, T+1)``. Column 0
  is the initial state, which has no emission.
* Symptoms ``Y`` form an ``int8`` array of shape ``(N, T, S)`` where column
  ``t-1`` holds the report of day ``t``. Missing cells hold :data:`MISSING`.
* Contacts of day ``t`` (``1 <= t <= T``) form ``G_t``, which drives the
  transition ``x[:, t-1] -> x[:, t]``.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError

MISSING = -1


@dataclass(frozen=True)
class ProblemDims:
    N: int
    T: int
    S: int
    K: int = 1
    M: int = 0

    def __post_init__(self):
        for name in ("N", "T", "S", "K"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}")
        if self.M < 0 or (self.N > 1 and self.M > self.N - 1):
            raise DomainError(f"max degree M={self.M} outside [0, N-1]")


class PersonIndex:
    """Bidirectional map between external person ids and dense indices."""

    def __init__(self, ids):
        ids = tuple(str(i) for i in ids)
        if len(set(ids)) != len(ids):
            raise DomainError("duplicate person ids")
        self.ids = ids
        self._index = {pid: k for k, pid in enumerate(ids)}

    @classmethod
    def from_count(cls, n):
        return cls(str(k) for k in range(1, n + 1))

    def __len__(self):
        return len(self.ids)

    def __contains__(self, pid):
        return str(pid) in self._index

    def __eq__(self, other):
        return isinstance(other, PersonIndex) and self.ids == other.ids

    def index(self, pid):
        try:
            return self._index[str(pid)]
        except KeyError:
            raise DomainError(f"unknown person id {pid!r}") from None


class DynamicNetwork:
    """Per-day undirected contact graphs ``G_1..G_T`` over ``N`` people.

    Edges are stored once per unordered pair as ``(i, j)`` with ``i < j``.
    """

    def __init__(self, num_nodes, edges_by_day, max_degree=None):
        if num_nodes <= 0:
            raise DomainError("network needs at least one node")
        self.num_nodes = int(num_nodes)
        days = []
        for t, edges in enumerate(edges_by_day, start=1):
            arr = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
            if arr.size:
                if arr.min() < 0 or arr.max() >= num_nodes:
                    raise DomainError(f"day {t}: node index outside [0, {num_nodes})")
                if np.any(arr[:, 0] == arr[:, 1]):
                    raise DomainError(f"day {t}: self-loop")
                arr = np.sort(arr, axis=1)
                arr = np.unique(arr, axis=0)
            arr.setflags(write=False)
            days.append(arr)
        self._edges = tuple(days)
        if max_degree is not None:
            worst = self.max_degree
            if worst > max_degree:
                raise DomainError(f"max degree {worst} exceeds bound {max_degree}")

    @property
    def num_days(self):
        return len(self._edges)

    def edges(self, t):
        """Edge array of day ``t`` (1-based)."""
        if not 1 <= t <= self.num_days:
            raise DomainError(f"day {t} outside [1, {self.num_days}]")
        return self._edges[t - 1]

    def degree(self, t):
        e = self.edges(t)
        return np.bincount(e.ravel(), minlength=self.num_nodes)

    @cached_property
    def max_degree(self):
        if self.num_days == 0:
            return 0
        return int(max((self.degree(t).max() for t in range(1, self.num_days + 1)), default=0))

    def neighbors(self, n, t):
        ptr, idx = self.csr
        return idx[ptr[t, n]:ptr[t, n + 1]]

    @cached_property
    def adjacency(self):
        """Dense boolean tensor of shape ``(T+1, N, N)``; slice 0 is empty."""
        A = np.zeros((self.num_days + 1, self.num_nodes, self.num_nodes), dtype=bool)
        for t in range(1, self.num_days + 1):
            e = self._edges[t - 1]
            A[t, e[:, 0], e[:, 1]] = True
            A[t, e[:, 1], e[:, 0]] = True
        A.setflags(write=False)
        return A

    @cached_property
    def csr(self):
        """``(ptr, idx)`` with ``idx[ptr[t, n]:ptr[t, n+1]]`` the sorted neighbours of n on day t."""
        N, T = self.num_nodes, self.num_days
        ptr = np.zeros((T + 1, N + 1), dtype=np.int64)
        chunks = []
        offset = 0
        for t in range(1, T + 1):
            e = self._edges[t - 1]
            both = np.concatenate([e, e[:, ::-1]]) if e.size else e
            order = np.lexsort((both[:, 1], both[:, 0])) if both.size else np.zeros(0, dtype=np.int64)
            both = both[order]
            counts = np.bincount(both[:, 0], minlength=N) if both.size else np.zeros(N, dtype=np.int64)
            ptr[t, 0] = offset
            ptr[t, 1:] = offset + np.cumsum(counts)
            chunks.append(both[:, 1] if both.size else np.zeros(0, dtype=np.int64))
            offset = ptr[t, N]
        ptr[0, :] = 0
        idx = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
        ptr.setflags(write=False)
        idx.setflags(write=False)
        return ptr, idx

    def __eq__(self, other):
        if not isinstance(other, DynamicNetwork):
            return NotImplemented
        return (self.num_nodes == other.num_nodes and self.num_days == other.num_days
                and all(np.array_equal(a, b) for a, b in zip(self._edges, other._edges)))

    @classmethod
    def empty(cls, num_nodes, num_days):
        return cls(num_nodes, [[] for _ in range(num_days)])


@dataclass(frozen=True)
class Covariates:
    """Covariate matrix with the constant-1 column first."""

    values: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        Z = np.asarray(self.values, dtype=float)
        if Z.ndim != 2 or Z.shape[1] < 1:
            raise DomainError("covariates must be a 2-d array with at least the intercept")
        if not np.all(np.isfinite(Z)):
            raise DomainError("covariates contain non-finite entries")
        if not np.all(Z[:, 0] == 1.0):
            raise DomainError("first covariate column must be all ones")
        Z = Z.copy()
        Z.setflags(write=False)
        object.__setattr__(self, "values", Z)
        names = tuple(self.names) or ("intercept",) + tuple(f"f{k}" for k in range(1, Z.shape[1]))
        if len(names) != Z.shape[1]:
            raise DomainError("one name per covariate column required")
        object.__setattr__(self, "names", names)

    @classmethod
    def from_features(cls, features, names=None):
        F = np.asarray(features, dtype=float)
        if F.ndim == 1:
            F = F[:, None]
        Z = np.hstack([np.ones((F.shape[0], 1)), F])
        if names is not None:
            names = ("intercept",) + tuple(names)
        return cls(Z, names or ())

    @property
    def K(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class BetaHyperParams:
    """Beta prior shapes for pi, alpha, beta, gamma and the two emission rows."""

    a_pi: float = 1.0
    b_pi: float = 1.0
    a_alpha: float = 1.0
    b_alpha: float = 1.0
    a_beta: float = 1.0
    b_beta: float = 1.0
    a_gamma: float = 1.0
    b_gamma: float = 1.0
    a_0: float = 1.0
    b_0: float = 1.0
    a_1: float = 1.0
    b_1: float = 1.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not v > 0:
                raise DomainError(f"hyper-parameter {k} must be positive")

    def theta_prior_mean(self):
        return np.array([self.a_0 / (self.a_0 + self.b_0), self.a_1 / (self.a_1 + self.b_1)])


def check_states(X, N=None, T=None):
    X = np.asarray(X)
    if X.ndim != 2:
        raise DomainError("state matrix must be 2-d")
    if not np.all((X == 0) | (X == 1)):
        raise DomainError("state matrix must be binary")
    if N is not None and X.shape[0] != N or T is not None and X.shape[1] != T + 1:
        raise DomainError(f"state matrix shape {X.shape} != ({N}, {T}+1)")
    return X.astype(np.int8)


def check_symptoms(Y, N=None, T=None):
    Y = np.asarray(Y)
    if Y.ndim != 3:
        raise DomainError("symptom tensor must be 3-d (N, T, S)")
    if not np.all((Y == 0) | (Y == 1) | (Y == MISSING)):
        raise DomainError("symptom values must be 0, 1 or MISSING")
    if N is not None and Y.shape[0] != N or T is not None and Y.shape[1] != T:
        raise DomainError(f"symptom tensor shape {Y.shape} != ({N}, {T}, S)")
    return Y.astype(np.int8)


def exposure_counts(X, G):
    """Number of infected contacts driving each transition.

    Returns ``C`` of shape ``(N, T+1)`` with ``C[n, t]`` the count of
    neighbours of ``n`` in ``G_t`` infected at day ``t-1``; column 0 is zero.
    """
    X = np.asarray(X)
    N, T1 = X.shape
    if N != G.num_nodes or T1 - 1 != G.num_days:
        raise DomainError("state matrix does not match network dimensions")
    A = G.adjacency
    C = np.zeros((N, T1), dtype=np.int64)
    # A[t] @ X[:, t-1] for every day at once
    C[:, 1:] = np.einsum("tij,jt->it", A[1:].astype(np.int64), X[:, :-1].astype(np.int64))
    return C


def infectious_sources(X, G, n, t):
    """Infected contacts of person ``n`` behind the transition into day ``t``.

    Returns the sorted array of neighbours of ``n`` in ``G_t`` whose state at
    day ``t-1`` is 1, together with its length.
    """
    X = np.asarray(X)
    if not 0 <= n < G.num_nodes:
        raise DomainError(f"person {n} outside [0, {G.num_nodes})")
    if not 1 <= t <= G.num_days:
        raise DomainError(f"day {t} outside [1, {G.num_days}]")
    nb = G.neighbors(n, t)
    src = nb[X[nb, t - 1] == 1]
    return src, len(src)


def pca_reduce(Z, num_components, standardize=True):
    """Replace the non-intercept covariates by their leading principal components.

    Returns ``(Covariates, explained_variance_ratio)`` where the ratios cover
    the retained components only.
    """
    if num_components <= 0:
        raise DomainError("num_components must be positive")
    values = Z.values if isinstance(Z, Covariates) else np.asarray(Z, dtype=float)
    F = values[:, 1:]
    if num_components > F.shape[1]:
        raise DomainError(f"num_components={num_components} exceeds feature count {F.shape[1]}")
    F = F - F.mean(axis=0)
    if standardize:
        sd = F.std(axis=0)
        F = F / np.where(sd > 0, sd, 1.0)
    _, sv, Vt = np.linalg.svd(F, full_matrices=False)
    var = sv ** 2
    total = var.sum()
    ratio = var / total if total > 0 else np.zeros_like(var)
    scores = F @ Vt[:num_components].T
    names = ("intercept",) + tuple(f"pc{k}" for k in range(1, num_components + 1))
    return Covariates.from_features(scores, names[1:]), ratio[:num_components]
