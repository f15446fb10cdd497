"""Generalized Baum-Welch EM for homogeneous GCHMMs.

The E-step runs loopy sum-product. The M-step uses count formulas built on
hard state assignments, with ``tau_j = (1-alpha)(1-beta)^j`` the probability
of staying healthy with ``j`` infected contacts.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .bp import build_factor_graph, init_messages, run_forward_backward
from .data import MISSING, BetaHyperParams, exposure_counts
from .errors import DomainError
from .model import InfectionParams

LO, HI = 1e-6, 1.0 - 1e-6


def _clamp(name, v):
    if not LO <= v <= HI:
        warnings.warn(f"{name}={v:.3g} clamped into [{LO}, {HI}]", stacklevel=3)
        return float(min(max(v, LO), HI))
    return float(v)


def _p1(beliefs):
    b = np.asarray(beliefs, dtype=float)
    return b[..., 1] if b.ndim == 3 else b


def hard_assign(beliefs):
    """Argmax state per cell; a 50/50 belief gives 0.

    Accepts an (N, T+1, 2) belief table or an (N, T+1) array of P(x=1).
    """
    b = np.asarray(beliefs, dtype=float)
    if b.ndim == 3:
        return (b[..., 1] > b[..., 0]).astype(np.int8)
    return (b > 0.5).astype(np.int8)


def m_step_pi_theta(beliefs, Y, hyper=None):
    """Initial rate from day-0 beliefs and belief-weighted emission frequencies.

    Only observed symptom cells enter ``theta``. A state with no mass on some
    symptom falls back to the prior mean for that state.
    """
    p = _p1(beliefs)
    pi = float(p[:, 0].mean())
    w1 = p[:, 1:, None]
    obs = (Y != MISSING)
    y1 = (Y == 1)
    theta = np.empty((2, Y.shape[2]))
    prior = (hyper or BetaHyperParams()).theta_prior_mean()
    for i, w in ((0, 1.0 - w1), (1, w1)):
        den = (w * obs).sum((0, 1))
        num = (w * y1).sum((0, 1))
        with np.errstate(invalid="ignore", divide="ignore"):
            theta[i] = np.where(den > 0, num / den, prior[i])
    return pi, theta


def m_step_gamma(x_tilde, prev_gamma=None):
    """Observed 1->0 transitions over 1-states that have a successor."""
    x = np.asarray(x_tilde)
    prev, nxt = x[:, :-1], x[:, 1:]
    den = int((prev == 1).sum())
    if den == 0:
        return prev_gamma
    return float(((prev == 1) & (nxt == 0)).sum() / den)


@dataclass
class AlphaBetaEstimate:
    alpha: float
    beta: float
    tau: dict = field(default_factory=dict)   # j -> survival estimate
    support: dict = field(default_factory=dict)


def m_step_alpha_beta(x_tilde, G, prev_beta=None):
    """Estimate ``alpha`` and ``beta`` from susceptible transitions grouped by exposure ``j``.

    ``alpha`` is the infection rate among unexposed susceptible cells,
    ``tau_j`` the survival rate among cells with ``j`` infected contacts, and
    ``beta = 1 - mean_j (tau_j / (1-alpha))^(1/j)`` over exposures that occur.
    """
    x = np.asarray(x_tilde)
    C = exposure_counts(x, G)[:, 1:]
    prev, nxt = x[:, :-1], x[:, 1:]
    sus = prev == 0
    den0 = int((sus & (C == 0)).sum())
    alpha = ((sus & (C == 0) & (nxt == 1)).sum() / den0) if den0 else LO
    alpha = _clamp("alpha", alpha)
    tau, support, roots = {}, {}, []
    for j in np.unique(C[sus & (C > 0)]):
        j = int(j)
        cell = sus & (C == j)
        d = int(cell.sum())
        tau[j] = float((cell & (nxt == 0)).sum() / d)
        support[j] = d
        ratio = tau[j] / (1.0 - alpha)
        if not 0.0 < ratio <= 1.0:
            ratio = _clamp(f"tau_{j}/(1-alpha)", ratio)
        roots.append(ratio ** (1.0 / j))
    if roots:
        beta = _clamp("beta", 1.0 - float(np.mean(roots)))
    else:
        beta = prev_beta if prev_beta is not None else LO
    return AlphaBetaEstimate(alpha, beta, tau, support)


@dataclass
class GbwResult:
    params: InfectionParams
    beliefs: np.ndarray        # (N, T+1, 2)
    x_tilde: np.ndarray
    iterations: int
    converged: bool
    history: list              # per-iteration max-norm parameter change

    @property
    def marginals(self):
        return self.beliefs[..., 1]


def _flat(p):
    g, a, b = p.scalars()
    return np.concatenate([[p.pi, g, a, b], p.theta.ravel()])


def run_gbw(Y, G, init, max_iters=15, tol=1e-4, known_params=False, bp_sweeps=50, bp_tol=1e-6,
            hyper=None, interp="receive"):
    """Alternate sum-product E-steps with count-based M-steps.

    With ``known_params`` the parameters are frozen and a single E-step runs;
    they may then be heterogeneous.
    Returned beliefs come from an E-step under the returned parameters.
    """
    if not known_params and not init.is_homogeneous():
        raise DomainError("generalized Baum-Welch expects homogeneous parameters")
    if max_iters < 0:
        raise DomainError("max_iters must be non-negative")
    params = init.copy()
    N = G.num_nodes
    store = None
    history = []
    converged = False
    it = 0

    def e_step(p, store):
        graph = build_factor_graph(G, p, Y=Y, interp=interp)
        if store is None:
            store = init_messages(graph)
        else:
            store.piF.reshape(N, -1, 2)[:, 0] = (1.0 - p.pi, p.pi)
        return run_forward_backward(graph, bp_sweeps, bp_tol, store=store)

    res = e_step(params, store)
    if known_params:
        x = hard_assign(res.beliefs)
        return GbwResult(params, res.beliefs, x, 0, True, history)
    for it in range(1, max_iters + 1):
        x = hard_assign(res.beliefs)
        pi, theta = m_step_pi_theta(res.beliefs, Y, hyper)
        g0, _, b0 = params.scalars()
        gamma = m_step_gamma(x, g0)
        ab = m_step_alpha_beta(x, G, prev_beta=b0)
        new = InfectionParams.homogeneous(
            N, _clamp("gamma", gamma), ab.alpha, ab.beta, _clamp("pi", pi), np.clip(theta, LO, HI))
        delta = float(np.max(np.abs(_flat(new) - _flat(params))))
        history.append(delta)
        params = new
        res = e_step(params, res.store)
        if delta < tol:
            converged = True
            break
    return GbwResult(params, res.beliefs, hard_assign(res.beliefs), it, converged, history)
