"""Interaction tables, dataset loaders, splitting and the synthetic MNAR generator."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import EPS, sigmoid

POSITIVE_THRESHOLD = 3


class FormatError(ValueError):
    """Malformed dataset file. The message names the file and location."""


def binarize(ratings):
    return (np.asarray(ratings) >= POSITIVE_THRESHOLD).astype(np.int8)


@dataclass(frozen=True)
class InteractionTable:
    """Observed (user, item) events of a ``num_users x num_items`` universe.

    ``ratings`` holds raw 1..5 ratings (0 when the table was built directly from
    binary labels); ``y`` holds the binary outcomes. Membership in the table is
    the observation indicator O.
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    y: np.ndarray
    ratings: np.ndarray = None

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.int64).reshape(-1)
        items = np.asarray(self.items, dtype=np.int64).reshape(-1)
        y = np.asarray(self.y, dtype=np.int8).reshape(-1)
        ratings = self.ratings
        ratings = np.zeros_like(y) if ratings is None else np.asarray(ratings, dtype=np.int8).reshape(-1)
        if not (len(users) == len(items) == len(y) == len(ratings)):
            raise ValueError("users, items, y and ratings must have equal lengths")
        if self.num_users < 0 or self.num_items < 0:
            raise ValueError("universe sizes must be non-negative")
        if len(users) and (users.min() < 0 or users.max() >= self.num_users):
            raise ValueError("user index out of range")
        if len(items) and (items.min() < 0 or items.max() >= self.num_items):
            raise ValueError("item index out of range")
        if np.any((y != 0) & (y != 1)):
            raise ValueError("outcomes must be binary")
        flat = users * self.num_items + items
        if len(np.unique(flat)) != len(flat):
            raise ValueError("duplicate (user, item) event")
        for name, arr in (("users", users), ("items", items), ("y", y), ("ratings", ratings)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_ratings(cls, num_users, num_items, users, items, ratings):
        ratings = np.asarray(ratings, dtype=np.int8)
        return cls(num_users, num_items, users, items, binarize(ratings), ratings)

    @property
    def n_observed(self) -> int:
        return len(self.users)

    @property
    def n_unobserved(self) -> int:
        return self.num_users * self.num_items - self.n_observed

    @property
    def flat_index(self) -> np.ndarray:
        return self.users * self.num_items + self.items

    def observed_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_users * self.num_items, dtype=bool)
        mask[self.flat_index] = True
        return mask.reshape(self.num_users, self.num_items)

    def positive_rate(self) -> float:
        """Observed CTR: mean outcome over the logged events."""
        return float(self.y.mean()) if self.n_observed else float("nan")

    def subset(self, idx) -> InteractionTable:
        idx = np.asarray(idx, dtype=np.int64)
        return InteractionTable(
            self.num_users, self.num_items,
            self.users[idx], self.items[idx], self.y[idx], self.ratings[idx],
        )

    def summary(self) -> dict:
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "n_observed": self.n_observed,
            "n_unobserved": self.n_unobserved,
            "positive_rate": self.positive_rate(),
        }


@dataclass(frozen=True)
class SplitSpec:
    validation_fraction: float = 0.30
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class SynthGroundTruth:
    """Oracle quantities of a synthetic dataset.

    ``outcomes`` holds the Bernoulli label drawn for every cell, so population
    risks can be computed exactly.
    """

    true_prob: np.ndarray
    policy_prob: np.ndarray
    outcomes: np.ndarray = field(default=None)


# ---------------------------------------------------------------------------
# loaders and writers


def _read_lines(path):
    path = Path(path)
    try:
        return path.read_text().splitlines()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read file ({exc.strerror})") from exc


def _check_rating(path, where, value):
    if not 1 <= value <= 5:
        raise FormatError(f"{path}: {where}: rating {value} outside 1..5")


def load_matrix_format(path) -> InteractionTable:
    """Load a dense ``users x items`` integer matrix where 0 marks a missing rating."""
    lines = _read_lines(path)
    rows = []
    width = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        tokens = line.split()
        try:
            row = [int(t) for t in tokens]
        except ValueError:
            bad = next(i for i, t in enumerate(tokens, start=1) if not re.fullmatch(r"[+-]?\d+", t))
            raise FormatError(f"{path}: line {lineno}, column {bad}: not an integer: {tokens[bad - 1]!r}") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise FormatError(f"{path}: line {lineno}: expected {width} columns, found {len(row)}")
        for col, v in enumerate(row, start=1):
            if not 0 <= v <= 5:
                raise FormatError(f"{path}: line {lineno}, column {col}: value {v} outside 0..5")
        rows.append(row)
    if not rows:
        raise FormatError(f"{path}: empty matrix file")
    mat = np.asarray(rows, dtype=np.int8)
    users, items = np.nonzero(mat)
    return InteractionTable.from_ratings(mat.shape[0], mat.shape[1], users, items, mat[users, items])


_HEADER_START = re.compile(r"#\s*users\s*=")
_HEADER = re.compile(r"#\s*users\s*=\s*(\d+)\s+items\s*=\s*(\d+)(?:\s+base\s*=\s*([01]))?\s*$")


def load_triplet_format(path, num_users=None, num_items=None, base=1) -> InteractionTable:
    """Load ``user item rating`` lines.

    An optional header line ``#users=U items=I base=B`` declares the universe and
    index base; any other line starting with ``#`` is a comment. Without a header
    the universe is inferred from the largest indices, unless given explicitly
    through ``num_users``/``num_items``.
    """
    lines = _read_lines(path)
    users, items, ratings = [], [], []
    seen = {}
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            if _HEADER_START.match(stripped):
                m = _HEADER.match(stripped)
                if m is None or users:
                    raise FormatError(f"{path}: line {lineno}: malformed header {line!r}")
                num_users, num_items = int(m.group(1)), int(m.group(2))
                if m.group(3) is not None:
                    base = int(m.group(3))
            continue
        tokens = line.split()
        if len(tokens) != 3:
            raise FormatError(f"{path}: line {lineno}: expected 3 fields, found {len(tokens)}")
        try:
            u, i, r = (int(t) for t in tokens)
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: non-integer field") from None
        _check_rating(path, f"line {lineno}", r)
        u -= base
        i -= base
        if u < 0 or i < 0:
            raise FormatError(f"{path}: line {lineno}: index below base {base}")
        if (u, i) in seen:
            raise FormatError(f"{path}: line {lineno}: duplicate event (also on line {seen[(u, i)]})")
        seen[(u, i)] = lineno
        users.append(u)
        items.append(i)
        ratings.append(r)

    max_u = max(users) + 1 if users else 0
    max_i = max(items) + 1 if items else 0
    num_users = max_u if num_users is None else num_users
    num_items = max_i if num_items is None else num_items
    if max_u > num_users or max_i > num_items:
        raise FormatError(f"{path}: index exceeds declared universe {num_users}x{num_items}")
    return InteractionTable.from_ratings(num_users, num_items, users, items, ratings)


def write_triplet_format(table: InteractionTable, path, base=1, comments=()):
    """Write the canonical triplet file with a universe header.

    Tables without raw ratings write the binary outcome as rating 5 or 1, which
    re-binarizes to the same label on load.
    """
    ratings = table.ratings
    if not np.any(ratings):
        ratings = np.where(table.y == 1, 5, 1)
    lines = [f"# {c}" for c in comments]
    lines.append(f"#users={table.num_users} items={table.num_items} base={base}")
    lines += [f"{u + base} {i + base} {r}" for u, i, r in zip(table.users, table.items, ratings)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_dense_matrix(mat, path):
    """One row per line, space separated, 17 significant digits."""
    with open(path, "w") as fh:
        for row in np.asarray(mat, dtype=np.float64):
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_dense_matrix(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=2)


# ---------------------------------------------------------------------------
# splitting and sampling


def split_train_validation(table: InteractionTable, spec: SplitSpec = SplitSpec()):
    """Random partition of the observed events into (train, validation)."""
    n = table.n_observed
    if n < 2:
        raise ValueError("need at least 2 observed events to split")
    n_val = int(np.floor(spec.validation_fraction * n + 0.5))
    n_val = min(max(n_val, 1), n - 1)
    perm = np.random.default_rng(spec.rng_seed).permutation(n)
    return table.subset(np.sort(perm[n_val:])), table.subset(np.sort(perm[:n_val]))


def sample_counterfactual_batch(table: InteractionTable, batch_size: int, rng, observed_mask=None):
    """Draw ``batch_size`` distinct unobserved events uniformly by rejection.

    Returns ``(users, items)`` index arrays. ``observed_mask`` (flat boolean
    array over all cells) may be passed to avoid rebuilding it on every call.
    """
    if table.n_unobserved < batch_size:
        raise ValueError(
            f"cannot draw {batch_size} counterfactuals from {table.n_unobserved} unobserved events"
        )
    if observed_mask is None:
        observed_mask = table.observed_mask().reshape(-1)
    n_cells = table.num_users * table.num_items
    picked = np.empty(0, dtype=np.int64)
    while len(picked) < batch_size:
        need = batch_size - len(picked)
        draw = rng.integers(0, n_cells, size=2 * need + 8)
        draw = draw[~observed_mask[draw]]
        cand = np.concatenate([picked, draw])
        _, first = np.unique(cand, return_index=True)
        picked = cand[np.sort(first)]
    picked = picked[:batch_size]
    return picked // table.num_items, picked % table.num_items


def all_events(num_users, num_items):
    users, items = np.divmod(np.arange(num_users * num_items), num_items)
    return users, items


# ---------------------------------------------------------------------------
# synthetic MNAR data


def _rescale_with_cap(weights, target, cap):
    """Find c with mean(min(c * weights, cap)) == target by bisection."""
    lo, hi = 0.0, cap / weights.min()
    if np.minimum(hi * weights, cap).mean() < target:
        raise ValueError("target observed fraction unreachable")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.minimum(mid * weights, cap).mean() < target:
            lo = mid
        else:
            hi = mid
    return hi


def generate_synthetic_mnar(
    num_users,
    num_items,
    latent_dim=4,
    policy_strength=5.0,
    target_observed_fraction=0.05,
    rng_seed=0,
    test_fraction=0.10,
):
    """Simulate MNAR training logs with a MAR test set and known ground truth.

    Latent factors are drawn N(0, 1/latent_dim) per coordinate, the click
    probability of a cell is ``sigmoid(u . v)`` and every cell gets a Bernoulli
    label. Exposure is an independent Bernoulli per cell with probability
    proportional to ``exp(policy_strength * true_prob)``, scaled to the target
    mean and capped at ``1 - EPS``. The MAR test set takes ``test_fraction`` of
    each user's unexposed cells uniformly at random.

    Returns ``(train, test, truth)``.
    """
    if latent_dim < 1:
        raise ValueError("latent_dim must be >= 1")
    if policy_strength < 0:
        raise ValueError("policy_strength must be >= 0")
    if not 0.0 < target_observed_fraction < 1.0:
        raise ValueError("target_observed_fraction must lie in (0, 1)")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")

    rng = np.random.default_rng(rng_seed)
    scale = 1.0 / np.sqrt(latent_dim)
    user_f = rng.standard_normal((num_users, latent_dim)) * scale
    item_f = rng.standard_normal((num_items, latent_dim)) * scale
    true_prob = sigmoid(user_f @ item_f.T)
    outcomes = (rng.random(true_prob.shape) < true_prob).astype(np.int8)

    weights = np.exp(policy_strength * (true_prob - true_prob.max()))
    cap = 1.0 - EPS
    c = _rescale_with_cap(weights, target_observed_fraction, cap)
    if np.mean(c * weights > cap) > 0.5:
        raise ValueError("infeasible exposure rescale: cap binds on more than half of the cells")
    policy_prob = np.minimum(c * weights, cap)
    if policy_strength == 0:
        policy_prob = np.full_like(true_prob, target_observed_fraction)

    exposed = rng.random(true_prob.shape) < policy_prob
    users, items = np.nonzero(exposed)
    train = InteractionTable(num_users, num_items, users, items, outcomes[users, items])

    # per-user MAR draw among unexposed cells
    keys = rng.random(true_prob.shape)
    keys[exposed] = np.inf
    n_free = (~exposed).sum(axis=1)
    n_test = np.floor(test_fraction * n_free + 0.5).astype(int)
    order = np.argsort(keys, axis=1, kind="stable")
    test_u, test_i = [], []
    for u in range(num_users):
        chosen = np.sort(order[u, : n_test[u]])
        test_u.append(np.full(len(chosen), u))
        test_i.append(chosen)
    test_u = np.concatenate(test_u) if test_u else np.empty(0, dtype=int)
    test_i = np.concatenate(test_i) if test_i else np.empty(0, dtype=int)
    test = InteractionTable(num_users, num_items, test_u, test_i, outcomes[test_u, test_i])
    return train, test, SynthGroundTruth(true_prob, policy_prob, outcomes)
