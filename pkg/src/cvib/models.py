"""MF and single-hidden-layer NCF backbones with analytic gradients.

Parameters are plain ``dict[str, np.ndarray]`` so the optimizer can treat every
backbone alike:

* MF:  ``user_emb (U, D)``, ``item_emb (I, D)``
* NCF: the MF tables plus ``W1 (H, 2D)``, ``b1 (H,)``, ``w_out (H,)``, ``b_out ()``
* stochastic mode adds ``user_log_sigma (U, D)`` and ``item_log_sigma (I, D)``;
  the embedding used downstream is then ``e + eps * exp(log_sigma)``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import gaussian_kl, sigmoid

MF = "mf"
NCF = "ncf"
KINDS = (MF, NCF)

INIT_STD = 0.01
DEFAULT_DIM = 4
DEFAULT_HIDDEN = 8


def model_kind(params) -> str:
    return NCF if "W1" in params else MF


def is_stochastic(params) -> bool:
    return "user_log_sigma" in params


def init_params(kind, num_users, num_items, dim=DEFAULT_DIM, hidden=DEFAULT_HIDDEN,
                rng_seed=0, stochastic=False, init_log_sigma=np.log(INIT_STD)):
    """Weights i.i.d. N(0, INIT_STD^2), biases zero, deterministic per seed."""
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if min(num_users, num_items, dim, hidden) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(rng_seed)
    params = {
        "user_emb": rng.normal(0.0, INIT_STD, (num_users, dim)),
        "item_emb": rng.normal(0.0, INIT_STD, (num_items, dim)),
    }
    if kind == NCF:
        params["W1"] = rng.normal(0.0, INIT_STD, (hidden, 2 * dim))
        params["b1"] = np.zeros(hidden)
        params["w_out"] = rng.normal(0.0, INIT_STD, hidden)
        params["b_out"] = np.zeros(())
    if stochastic:
        params["user_log_sigma"] = np.full((num_users, dim), float(init_log_sigma))
        params["item_log_sigma"] = np.full((num_items, dim), float(init_log_sigma))
    return params


def copy_params(params):
    return {k: v.copy() for k, v in params.items()}


def zeros_like(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def sample_noise(params, n, rng):
    """Standard normal noise for the reparameterized embeddings of ``n`` events."""
    if not is_stochastic(params):
        return None
    dim = params["user_emb"].shape[1]
    return rng.standard_normal((n, dim)), rng.standard_normal((n, dim))


def _check_bounds(params, users, items):
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if users.shape != items.shape:
        raise ValueError("users and items must have the same shape")
    n_u, n_i = len(params["user_emb"]), len(params["item_emb"])
    if users.size and (users.min() < 0 or users.max() >= n_u):
        raise IndexError(f"user index out of range [0, {n_u})")
    if items.size and (items.min() < 0 or items.max() >= n_i):
        raise IndexError(f"item index out of range [0, {n_i})")
    return users, items


def _embed(params, users, items, noise):
    zu = params["user_emb"][users]
    zi = params["item_emb"][items]
    if noise is not None and is_stochastic(params):
        zu = zu + noise[0] * np.exp(params["user_log_sigma"][users])
        zi = zi + noise[1] * np.exp(params["item_log_sigma"][items])
    return zu, zi


def _forward(params, users, items, noise):
    zu, zi = _embed(params, users, items, noise)
    if model_kind(params) == MF:
        return np.sum(zu * zi, axis=1), (zu, zi)
    z = np.concatenate([zu, zi], axis=1)
    pre = z @ params["W1"].T + params["b1"]
    h = np.maximum(pre, 0.0)
    return h @ params["w_out"] + params["b_out"], (zu, zi, z, pre, h)


def forward(params, users, items, noise=None):
    """Return ``(logits, probs)`` for a batch of events."""
    users, items = _check_bounds(params, users, items)
    logits, _ = _forward(params, users, items, noise)
    return logits, sigmoid(logits)


def mf_forward(params, users, items, noise=None):
    if model_kind(params) != MF:
        raise ValueError("mf_forward needs MF parameters")
    return forward(params, users, items, noise)


def ncf_forward(params, users, items, noise=None):
    if model_kind(params) != NCF:
        raise ValueError("ncf_forward needs NCF parameters")
    return forward(params, users, items, noise)


def predict_proba(params, users, items):
    return forward(params, users, items)[1]


def backward(params, users, items, upstream, noise=None, grads=None):
    """Accumulate d(sum of losses)/d(params) given d(loss)/d(logit) per event.

    ``grads`` is updated in place when given, so several batches (factual and
    counterfactual) can feed one gradient. ReLU's subgradient at 0 is 0.
    """
    users, items = _check_bounds(params, users, items)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != users.shape:
        raise ValueError(f"upstream has shape {upstream.shape}, batch has {users.shape}")
    if grads is None:
        grads = zeros_like(params)
    _, cache = _forward(params, users, items, noise)

    if model_kind(params) == MF:
        zu, zi = cache
        d_zu = upstream[:, None] * zi
        d_zi = upstream[:, None] * zu
    else:
        zu, zi, z, pre, h = cache
        grads["w_out"] += h.T @ upstream
        grads["b_out"] += upstream.sum()
        d_pre = upstream[:, None] * params["w_out"][None, :] * (pre > 0)
        grads["W1"] += d_pre.T @ z
        grads["b1"] += d_pre.sum(axis=0)
        d_z = d_pre @ params["W1"]
        dim = zu.shape[1]
        d_zu, d_zi = d_z[:, :dim], d_z[:, dim:]

    np.add.at(grads["user_emb"], users, d_zu)
    np.add.at(grads["item_emb"], items, d_zi)
    if noise is not None and is_stochastic(params):
        np.add.at(grads["user_log_sigma"], users, d_zu * noise[0] * np.exp(params["user_log_sigma"][users]))
        np.add.at(grads["item_log_sigma"], items, d_zi * noise[1] * np.exp(params["item_log_sigma"][items]))
    return grads


def embedding_sq_norm(params, users, items, scale=1.0, grads=None):
    """Sum over events of ``||e_u||^2 + ||e_i||^2``; a user seen twice counts twice.

    Returns ``(value, grads)`` where grads hold ``scale`` times the gradient.
    """
    users, items = _check_bounds(params, users, items)
    eu = params["user_emb"][users]
    ei = params["item_emb"][items]
    value = float(np.sum(eu * eu) + np.sum(ei * ei))
    if grads is None:
        grads = zeros_like(params)
    np.add.at(grads["user_emb"], users, 2.0 * scale * eu)
    np.add.at(grads["item_emb"], items, 2.0 * scale * ei)
    return value, grads


def minimality(params, users, items, scale=1.0, grads=None):
    """The compression penalty on the embeddings of a batch.

    Deterministic embeddings use the squared norm; stochastic embeddings use the
    Gaussian KL to a standard normal prior (which equals the squared norm at
    sigma = 1).
    """
    if not is_stochastic(params):
        return embedding_sq_norm(params, users, items, scale, grads)
    users, items = _check_bounds(params, users, items)
    if grads is None:
        grads = zeros_like(params)
    value = 0.0
    for idx, emb, log_sig in ((users, "user_emb", "user_log_sigma"), (items, "item_emb", "item_log_sigma")):
        e = params[emb][idx]
        sig = np.exp(params[log_sig][idx])
        value += float(np.sum(gaussian_kl(e, sig)))
        np.add.at(grads[emb], idx, 2.0 * scale * e)
        np.add.at(grads[log_sig], idx, scale * (sig - 0.5))
    return value, grads


# ---------------------------------------------------------------------------
# checkpoints
#
# Text layout, one block per array:
#
#   # cvib checkpoint v1
#   array <name> <ndim> <dim_1> ... <dim_k>
#   <values, row-major, one row of the last axis per line, %.17g>
#
# 0-d arrays write a single value line. %.17g round-trips float64 exactly.

_MAGIC = "# cvib checkpoint v1"


def save_params(params, path):
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(path, **params)
        return
    out = [_MAGIC]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=np.float64)
        out.append(f"array {name} {arr.ndim} " + " ".join(str(d) for d in arr.shape))
        rows = arr.reshape(1, 1) if arr.ndim == 0 else arr.reshape(-1, arr.shape[-1]) if arr.size else []
        out.extend(" ".join(f"{v:.17g}" for v in row) for row in rows)
    path.write_text("\n".join(out) + "\n")


def load_params(path):
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as data:
            return {k: data[k].astype(np.float64) for k in data.files}
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise ValueError(f"{path}: not a cvib checkpoint")
    params = {}
    pos = 1
    while pos < len(lines):
        head = lines[pos].split()
        pos += 1
        if not head:
            continue
        if head[0] != "array":
            raise ValueError(f"{path}: line {pos}: expected 'array' header")
        name, ndim = head[1], int(head[2])
        shape = tuple(int(d) for d in head[3:3 + ndim])
        n_rows = 1 if ndim == 0 else int(np.prod(shape[:-1])) if shape[-1] else 0
        values = [float(v) for line in lines[pos:pos + n_rows] for v in line.split()]
        pos += n_rows
        params[name] = np.array(values, dtype=np.float64).reshape(shape)
    return params
