"""Metrics, the two-step baseline and one-step-ahead symptom prediction."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .bp import build_factor_graph, run_forward_backward
from .data import MISSING, Covariates
from .errors import DomainError
from .gibbs import GibbsConfig, run_gibbs
from .model import RECEIVE, SIGMOID, LinkCoefficients

CLAMP = 1e-6


def classify(posterior, threshold=0.5):
    """1 where the probability strictly exceeds ``threshold``."""
    if not 0 < threshold < 1:
        raise DomainError("threshold must lie in (0, 1)")
    return (np.asarray(posterior) > threshold).astype(np.int8)


@dataclass
class Metrics:
    accuracy: float
    recall: float = None
    norm_gamma: float = None
    norm_alpha: float = None
    norm_beta: float = None
    y_onestep_accuracy: float = None

    def to_json(self):
        return {k: (None if v is None else float(v)) for k, v in self.__dict__.items()}


def metrics(truth, pred, truth_params=None, pred_params=None):
    """Cellwise accuracy, recall on truly infected cells and per-parameter 2-norm errors.

    Recall is ``None`` when no cell is truly infected.
    """
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape:
        raise DomainError(f"shape mismatch {truth.shape} vs {pred.shape}")
    acc = float(np.mean(truth == pred))
    pos = truth == 1
    rec = float(np.mean(pred[pos] == 1)) if pos.any() else None
    out = Metrics(acc, rec)
    if truth_params is not None and pred_params is not None:
        for k in ("gamma", "alpha", "beta"):
            t = np.asarray(_get(truth_params, k), dtype=float)
            p = np.asarray(_get(pred_params, k), dtype=float)
            setattr(out, f"norm_{k}", float(np.linalg.norm(p - t)))
    return out


def _get(obj, k):
    return obj[k] if isinstance(obj, dict) else getattr(obj, k)


def predict_next_infection(p_now, G, t, params, interp=RECEIVE):
    """P(x[:, t+1] = 1) from per-person filtered marginals at day ``t``.

    Contacts are treated as independent under the current marginals.
    """
    p_now = np.asarray(p_now, dtype=float)
    A = G.adjacency[t + 1]
    beff = params.beta[:, None] if interp == RECEIVE else params.beta[None, :]
    factor = np.where(A, 1.0 - p_now[None, :] * np.broadcast_to(beff, A.shape), 1.0)
    stay = (1.0 - params.alpha) * np.prod(factor, axis=1)
    return p_now * (1.0 - params.gamma) + (1.0 - p_now) * (1.0 - stay)


def symptom_probability(p_infected, theta):
    """P(y=1) per person and symptom: ``p theta_1 + (1-p) theta_0``."""
    p = np.asarray(p_infected, dtype=float)[..., None]
    return p * theta[1] + (1.0 - p) * theta[0]


def one_step_ahead(Y, G, params, t, interp=RECEIVE, max_sweeps=50, tol=1e-6):
    """Filter with symptoms up to day ``t`` and predict symptom probabilities on day ``t+1``.

    Returns an ``(N, S)`` array.
    """
    N, T, S = Y.shape
    if not 0 <= t < T:
        raise DomainError(f"prediction origin {t} outside [0, {T})")
    Yf = np.array(Y, dtype=np.int8)
    Yf[:, t:, :] = MISSING          # column t holds day t+1
    res = run_forward_backward(build_factor_graph(G, params, Y=Yf, interp=interp), max_sweeps, tol)
    p_next = predict_next_infection(res.marginals[:, t], G, t, params, interp)
    return symptom_probability(p_next, params.theta)


def one_step_accuracy(Y, G, params, interp=RECEIVE, days=None, threshold=0.5):
    """Thresholded one-step-ahead accuracy over observed cells of the chosen forecast days."""
    N, T, S = Y.shape
    days = range(T) if days is None else days
    hits = total = 0
    for t in days:
        pred = classify(one_step_ahead(Y, G, params, t, interp), threshold)
        obs = Y[:, t, :] != MISSING
        hits += int(np.sum(pred[obs] == Y[:, t, :][obs]))
        total += int(obs.sum())
    return hits / total if total else None


def fit_logistic_baseline(posterior_params, Z, ridge=1e-6):
    """Least squares of logit posterior means on ``Z`` per role.

    ``posterior_params`` maps ``gamma/alpha/beta`` to per-person means.
    Rank-deficient ``Z`` switches to a ridge solve with a warning.
    """
    Zv = Z.values if isinstance(Z, Covariates) else np.asarray(Z, dtype=float)
    rows = []
    deficient = np.linalg.matrix_rank(Zv) < Zv.shape[1]
    if deficient:
        warnings.warn("covariates are collinear; using a ridge fit", stacklevel=2)
    for k in ("gamma", "alpha", "beta"):
        m = np.clip(np.asarray(_get(posterior_params, k), dtype=float), CLAMP, 1 - CLAMP)
        y = logit(m)
        if deficient:
            coef = np.linalg.solve(Zv.T @ Zv + ridge * np.eye(Zv.shape[1]), Zv.T @ y)
        else:
            coef, *_ = np.linalg.lstsq(Zv, y, rcond=None)
        rows.append(coef)
    return LinkCoefficients(np.vstack(rows), SIGMOID)


@dataclass
class BaselineResult:
    link: LinkCoefficients
    gamma: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    posterior_x: np.ndarray
    gibbs_params: object


def two_step_baseline(Y, G, Z, iterations=500, interp=RECEIVE, rng=None):
    """Heterogeneous Gibbs with flat priors, then a logistic fit of the posterior means."""
    cfg = GibbsConfig(iterations=iterations, interp=interp, homogeneous=False)
    res = run_gibbs(Y, G, Z, cfg, rng)
    link = fit_logistic_baseline(res.posterior_params, Z)
    Zv = Z.values if isinstance(Z, Covariates) else np.asarray(Z, dtype=float)
    u = expit(Zv @ link.eta.T)
    return BaselineResult(link, u[:, 0], u[:, 1], u[:, 2], res.posterior_x, res.posterior_params)
