"""Training objectives and the naive-Bayes propensity estimator.

Every loss takes predicted probabilities (already clamped by ``sigmoid``) and
returns the scalar loss together with d(loss)/d(logit) for each input event,
ready to be fed to :func:`cvib.models.backward`. The logit derivative uses
``dq/dlogit = q (1 - q)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import bce, entropy, logit, xent
from .models import backward, forward
from .optim import adam_step

ALPHA_GRID = (2.0, 1.0, 0.5, 0.1)
GAMMA_GRID = (1.0, 0.1, 1e-2, 1e-3)

ERM = "erm"
CVIB = "cvib"
IPS = "ips"
SNIPS = "snips"
DR = "dr"
DRJL = "drjl"
OBJECTIVES = (ERM, CVIB, IPS, SNIPS, DR, DRJL)
PROPENSITY_OBJECTIVES = (IPS, SNIPS, DR, DRJL)

ELEMENTWISE = "elementwise"
BATCH_MEAN = "batch_mean"


def _as_arrays(*arrays):
    out = [np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays]
    n = len(out[0])
    if any(len(a) != n for a in out):
        raise ValueError("input lengths differ: " + ", ".join(str(len(a)) for a in out))
    return out


def erm_loss(q, y):
    """Mean binary cross-entropy over the factual batch."""
    q, y = _as_arrays(q, y)
    if len(q) == 0:
        raise ValueError("empty batch")
    n = len(q)
    return float(np.mean(bce(y, q))), (q - y) / n


# ---------------------------------------------------------------------------
# CVIB


@dataclass(frozen=True)
class CvibConfig:
    """Weights of the balancing (alpha), minimality (beta) and confidence (gamma) terms.

    ``pairing`` selects how factual and counterfactual predictions meet in the
    balancing cross-entropy: ``elementwise`` pairs them by batch position,
    ``batch_mean`` compares the two batch-mean probabilities.
    """

    alpha: float = 1.0
    beta: float = 0.0
    gamma: float = 1e-3
    pairing: str = ELEMENTWISE

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("alpha, beta and gamma must be non-negative")
        if self.pairing not in (ELEMENTWISE, BATCH_MEAN):
            raise ValueError(f"unknown pairing {self.pairing!r}")


class CvibLoss(NamedTuple):
    loss: float
    grad_pos: np.ndarray
    grad_neg: np.ndarray
    grad_emb_norm: float


def cvib_terms(q_pos, y_pos, q_neg, pairing=ELEMENTWISE):
    """The unweighted sufficiency, balancing and confidence terms."""
    q_pos, y_pos = _as_arrays(q_pos, y_pos)
    q_neg = np.asarray(q_neg, dtype=np.float64).reshape(-1)
    sufficiency = float(np.mean(bce(y_pos, q_pos)))
    if pairing == ELEMENTWISE:
        balancing = float(np.mean(xent(q_pos, q_neg)))
    else:
        balancing = float(xent(q_pos.mean(), q_neg.mean()))
    penalty = float(np.mean(entropy(q_pos)))
    return sufficiency, balancing, penalty


def cvib_loss(q_pos, y_pos, q_neg, emb_norms, cfg: CvibConfig) -> CvibLoss:
    """sufficiency + alpha * balancing - gamma * confidence + beta * emb_norms.

    The balancing cross-entropy is differentiated through both of its
    arguments. ``grad_emb_norm`` is d(loss)/d(emb_norms), i.e. ``beta``.
    """
    q_pos, y_pos = _as_arrays(q_pos, y_pos)
    q_neg = np.asarray(q_neg, dtype=np.float64).reshape(-1)
    if len(q_pos) == 0:
        raise ValueError("empty factual batch")
    if cfg.pairing == ELEMENTWISE and len(q_neg) != len(q_pos):
        raise ValueError(f"elementwise pairing needs equal batches, got {len(q_pos)} and {len(q_neg)}")
    if len(q_neg) == 0:
        raise ValueError("empty counterfactual batch")

    n, m = len(q_pos), len(q_neg)
    slope_pos = q_pos * (1.0 - q_pos)
    slope_neg = q_neg * (1.0 - q_neg)
    sufficiency, balancing, penalty = cvib_terms(q_pos, y_pos, q_neg, cfg.pairing)
    loss = sufficiency + cfg.alpha * balancing - cfg.gamma * penalty + cfg.beta * float(emb_norms)

    grad_pos = (q_pos - y_pos) / n
    grad_pos += cfg.gamma * logit(q_pos) * slope_pos / n
    if cfg.pairing == ELEMENTWISE:
        grad_pos += -cfg.alpha * logit(q_neg) * slope_pos / n
        grad_neg = cfg.alpha * (q_neg - q_pos) / n
    else:
        a, b = q_pos.mean(), q_neg.mean()
        grad_pos += -cfg.alpha * logit(b) * slope_pos / n
        grad_neg = -cfg.alpha * (a / b - (1.0 - a) / (1.0 - b)) * slope_neg / m
    return CvibLoss(loss, grad_pos, grad_neg, cfg.beta)


# ---------------------------------------------------------------------------
# propensities


@dataclass(frozen=True)
class Propensities:
    """Global naive-Bayes propensities p(O=1 | y) for y in {0, 1}."""

    p_given_y1: float
    p_given_y0: float
    clip_floor: float = 0.05
    report: dict = None

    def lookup(self, y, users=None, items=None):
        """Propensity of each event given its outcome; the event itself is unused."""
        y = np.asarray(y)
        return np.where(y == 1, self.p_given_y1, self.p_given_y0).astype(np.float64)

    def to_text(self) -> str:
        lines = [f"p(O=1|y=1) = {self.p_given_y1:.17g}", f"p(O=1|y=0) = {self.p_given_y0:.17g}"]
        for k, v in (self.report or {}).items():
            lines.append(f"{k} = {v:.17g}" if isinstance(v, float) else f"{k} = {v}")
        return "\n".join(lines) + "\n"


def naive_bayes_propensity(pos_rate_observed, p_observed, pos_rate_mar):
    """p(O=1|y) = p(y|O=1) p(O=1) / p(y) for y = 1 and y = 0, unclipped."""
    if not 0.0 < pos_rate_mar < 1.0:
        raise ValueError("MAR sample must contain both outcomes")
    p1 = pos_rate_observed * p_observed / pos_rate_mar
    p0 = (1.0 - pos_rate_observed) * p_observed / (1.0 - pos_rate_mar)
    return p1, p0


def estimate_propensities(train, mar_sample, clip_floor=0.05) -> Propensities:
    """Estimate the two global propensities from MNAR train and a small MAR sample.

    Values are clipped to ``[clip_floor, 1]``.
    """
    if train.n_observed == 0 or mar_sample.n_observed == 0:
        raise ValueError("train and MAR sample must be non-empty")
    pos_obs = train.positive_rate()
    n_l, n_ul = train.n_observed, train.n_unobserved
    p_obs = n_l / (n_l + n_ul)
    pos_mar = mar_sample.positive_rate()
    p1, p0 = naive_bayes_propensity(pos_obs, p_obs, pos_mar)
    raw = (p1, p0)
    clipped = [min(max(p, clip_floor), 1.0) for p in raw]
    report = {
        "raw_p(O=1|y=1)": float(p1),
        "raw_p(O=1|y=0)": float(p0),
        "p(y=1|O=1)": float(pos_obs),
        "p(O=1)": float(p_obs),
        "p(y=1)": float(pos_mar),
        "n_observed": n_l,
        "n_unobserved": n_ul,
        "n_mar": mar_sample.n_observed,
        "clip_floor": float(clip_floor),
        "clip_events": sum(c != r for c, r in zip(clipped, raw)),
    }
    return Propensities(clipped[0], clipped[1], clip_floor, report)


# ---------------------------------------------------------------------------
# propensity-weighted baselines


def ips_loss(q, y, p, total_events=None):
    """Inverse-propensity-weighted cross-entropy.

    Normalized by the batch size, or by ``total_events`` when given (the
    unbiased population-risk form, where the batch holds every observed event).
    """
    q, y, p = _as_arrays(q, y, p)
    norm = len(q) if total_events is None else total_events
    if norm == 0:
        raise ValueError("empty batch")
    w = 1.0 / p
    return float(np.sum(w * bce(y, q)) / norm), w * (q - y) / norm


def snips_loss(q, y, p):
    """Self-normalized IPS; the weights are treated as constants for the gradient."""
    q, y, p = _as_arrays(q, y, p)
    if len(q) == 0:
        raise ValueError("empty batch")
    w = 1.0 / p
    total = w.sum()
    return float(np.sum(w * bce(y, q)) / total), w * (q - y) / total


def dr_loss(q, y, obs, r, p):
    """Doubly robust risk over a batch drawn from the whole event space.

    ``mean[e_hat + O * (e - e_hat) / p]`` with ``e = bce(y, q)`` the true error of
    observed events and ``e_hat = bce(r, q)`` the error imputed from the
    imputation model's probability ``r``. ``y`` and ``p`` are ignored where
    ``obs == 0``.

    Returns ``(loss, grad_model_logits, grad_imputer_logits)``.
    """
    q, y, obs, r, p = _as_arrays(q, y, obs, r, p)
    n = len(q)
    if n == 0:
        raise ValueError("empty batch")
    o = obs > 0
    w = np.where(o, 1.0 / np.where(o, p, 1.0), 0.0)
    y = np.where(o, y, 0.0)
    e = bce(y, q)
    e_hat = xent(r, q)
    loss = float(np.mean(e_hat + w * (e - e_hat)))
    grad_model = ((q - r) + w * (r - y)) / n
    grad_imputer = (1.0 - w) * (-logit(q)) * r * (1.0 - r) / n
    return loss, grad_model, grad_imputer


def drjl_imputer_loss(q, y, r, p):
    """Propensity-weighted squared gap between true and imputed errors.

    Evaluated on observed events only; ``q`` comes from the frozen prediction
    model. Returns ``(loss, grad_imputer_logits)``.
    """
    q, y, r, p = _as_arrays(q, y, r, p)
    n = len(q)
    if n == 0:
        return 0.0, np.zeros(0)
    gap = bce(y, q) - xent(r, q)
    loss = float(np.mean(gap * gap / p))
    # d e_hat / d r = -logit(q)
    grad = 2.0 * gap * logit(q) * r * (1.0 - r) / (p * n)
    return loss, grad


class DrjlStep(NamedTuple):
    model_loss: float
    imputer_loss: float
    grad_model: np.ndarray
    grad_imputer: np.ndarray


def drjl_step(model, imputer, users, items, obs, y, p, model_opt, imputer_opt, noise=None) -> DrjlStep:
    """One joint-learning step: update the prediction model on the doubly robust
    loss with the imputer frozen, then update the imputer on the observed events
    of the batch with the (updated) prediction model frozen.
    """
    users = np.asarray(users)
    items = np.asarray(items)
    obs = np.asarray(obs) > 0
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)

    _, q = forward(model, users, items, noise)
    _, r = forward(imputer, users, items)
    model_loss, grad_model, _ = dr_loss(q, y, obs, r, p)
    adam_step(model, backward(model, users, items, grad_model, noise), model_opt)

    u_obs, i_obs = users[obs], items[obs]
    _, q = forward(model, u_obs, i_obs)
    _, r = forward(imputer, u_obs, i_obs)
    imputer_loss, grad_imputer = drjl_imputer_loss(q, y[obs], r, p[obs])
    if len(u_obs):
        adam_step(imputer, backward(imputer, u_obs, i_obs, grad_imputer), imputer_opt)
    return DrjlStep(model_loss, imputer_loss, grad_model, grad_imputer)
