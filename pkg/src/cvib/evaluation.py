"""MAR-test metrics: MSE, global AUC and per-user nDCG@k."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .models import predict_proba


class UndefinedMetricError(ValueError):
    """The metric is undefined for the given labels (e.g. a single class)."""


def mse(q, y) -> float:
    q = np.asarray(q, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if q.shape != y.shape or q.size == 0:
        raise ValueError("mse needs equal, non-empty inputs")
    return float(np.mean((q - y) ** 2))


def auc(scores, y) -> float:
    """Probability that a random positive outscores a random negative, ties 1/2.

    Computed from the rank sum of the positives with mid-ranks for ties. Mid-ranks
    are half-integers, so the numerator is exact and the result equals the
    pairwise count bit for bit.
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    if scores.shape != y.shape:
        raise ValueError("scores and labels differ in shape")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("auc needs at least one positive and one negative")
    ranks = rankdata(scores)
    u_stat = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def ndcg_user(scores, labels, k, item_ids=None) -> float:
    """nDCG@k of one user's list with binary gains; NaN when there is no positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if item_ids is None:
        item_ids = np.arange(len(scores))
    n_pos = int(labels.sum())
    if n_pos == 0:
        return float("nan")
    order = np.lexsort((item_ids, -scores))
    top = labels[order[:k]]
    discounts = 1.0 / np.log2(np.arange(2, len(top) + 2))
    dcg = float(np.sum(top * discounts))
    idcg = float(np.sum(discounts[: min(k, n_pos)]))
    return dcg / idcg


def ndcg_at_k(per_user_scores, per_user_labels, k, per_user_items=None):
    """Mean nDCG@k over users with at least one positive.

    Returns ``(mean_ndcg, n_users_ranked)``. Within a user, equal scores are
    ordered by item index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if per_user_items is None:
        per_user_items = [None] * len(per_user_scores)
    values = []
    for s, l, ids in zip(per_user_scores, per_user_labels, per_user_items):
        v = ndcg_user(s, l, k, ids)
        if not np.isnan(v):
            values.append(v)
    if not values:
        raise UndefinedMetricError("no user has a positive label")
    # fixed summation order keeps the mean reproducible
    return float(np.sum(values) / len(values)), len(values)


def group_by_user(users, items, scores, labels):
    order = np.lexsort((items, users))
    users, items, scores, labels = users[order], items[order], scores[order], labels[order]
    cuts = np.flatnonzero(np.diff(users)) + 1
    return np.split(scores, cuts), np.split(labels, cuts), np.split(items, cuts)


@dataclass
class EvalReport:
    mse: float
    auc: float
    ndcg_at: dict = field(default_factory=dict)
    n_test: int = 0
    n_users_ranked: int = 0

    def to_dict(self) -> dict:
        out = {"mse": self.mse, "auc": self.auc}
        out.update({f"ndcg@{k}": v for k, v in sorted(self.ndcg_at.items())})
        out["n_test"] = self.n_test
        out["n_users_ranked"] = self.n_users_ranked
        return out

    def to_text(self) -> str:
        return "".join(f"{k} {_fmt(v)}\n" for k, v in self.to_dict().items())

    @classmethod
    def from_text(cls, text):
        kv = {}
        for line in text.splitlines():
            if line.strip() and not line.startswith("#"):
                key, value = line.split(None, 1)
                kv[key] = value.strip()
        ndcg = {int(k.split("@")[1]): float(v) for k, v in kv.items() if k.startswith("ndcg@")}
        return cls(float(kv["mse"]), float(kv["auc"]), ndcg, int(kv["n_test"]), int(kv["n_users_ranked"]))


def _fmt(v):
    return str(v) if isinstance(v, (int, np.integer)) else f"{v:.17g}"


def evaluate_predictions(users, items, q, y, ks=(5, 10)) -> EvalReport:
    users = np.asarray(users)
    items = np.asarray(items)
    q = np.asarray(q, dtype=np.float64)
    y = np.asarray(y)
    report = EvalReport(mse(q, y), auc(q, y), n_test=len(y))
    grouped_scores, grouped_labels, grouped_items = group_by_user(users, items, q, y)
    for k in ks:
        value, n_ranked = ndcg_at_k(grouped_scores, grouped_labels, k, grouped_items)
        report.ndcg_at[k] = value
        report.n_users_ranked = n_ranked
    return report


def evaluate(params, test, ks=(5, 10)) -> EvalReport:
    """Score a model on a MAR test table."""
    q = predict_proba(params, test.users, test.items)
    return evaluate_predictions(test.users, test.items, q, test.y, ks)
