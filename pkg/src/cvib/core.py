"""Numerically safe probability primitives shared by the losses and models.

All functions accept scalars or numpy arrays and broadcast elementwise.
Probabilities are clamped to ``[EPS, 1 - EPS]`` so every log term stays finite.
"""

import numpy as np

EPS = 1e-7


class DomainError(ValueError):
    """Raised when an input lies outside the domain of a primitive."""


def clamp_prob(q):
    return np.clip(q, EPS, 1.0 - EPS)


def sigmoid(logit):
    """Logistic function clamped to ``[EPS, 1 - EPS]``.

    Raises DomainError on NaN or infinite logits.
    """
    x = np.asarray(logit, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("sigmoid requires finite logits")
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    out = clamp_prob(out)
    return out if out.ndim else float(out)


def logit(q):
    q = np.asarray(q, dtype=np.float64)
    return np.log(q) - np.log1p(-q)


def bce(y, q):
    """Binary cross-entropy of label ``y`` under predicted probability ``q``."""
    y = np.asarray(y, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return -(y * np.log(q) + (1.0 - y) * np.log1p(-q))


def xent(q_a, q_b):
    """Cross-entropy ``H(q_a, q_b)`` between two Bernoulli distributions."""
    q_a = np.asarray(q_a, dtype=np.float64)
    q_b = np.asarray(q_b, dtype=np.float64)
    return -(q_a * np.log(q_b) + (1.0 - q_a) * np.log1p(-q_b))


def entropy(q):
    """Bernoulli entropy in nats, in ``[0, ln 2]``."""
    return xent(q, q)


def gaussian_kl(e, sigma):
    """KL of ``N(e, diag(sigma))`` to a standard normal prior, in the reduced form

        ||e||^2 + sum_d (sigma_d - 0.5 * ln sigma_d) - D

    Constants are kept as written so that ``sigma = 1`` gives exactly ``||e||^2``.
    The last axis is the embedding dimension.
    """
    e = np.asarray(e, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise DomainError("gaussian_kl requires positive sigma")
    dim = e.shape[-1] if e.ndim else 1
    # constants first, so sigma = 1 adds an exact zero to the norm
    return (np.sum(sigma - 0.5 * np.log(sigma), axis=-1) - dim) + np.sum(e * e, axis=-1)
