"""Mini-batch training with Adam, early stopping and exhaustive grid search."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import objectives as obj
from .core import bce
from .data import InteractionTable, sample_counterfactual_batch
from .evaluation import UndefinedMetricError, auc
from .models import (
    MF,
    backward,
    copy_params,
    forward,
    init_params,
    minimality,
    predict_proba,
    sample_noise,
)
from .objectives import CvibConfig
from .optim import AdamState, adam_step

LR_GRID = (0.1, 0.05, 0.01, 0.005, 0.001)
WEIGHT_DECAY_GRID = (1e-3, 1e-4, 1e-5)
BATCH_SIZE_GRID = (128, 256, 512, 1024, 2048)


@dataclass(frozen=True)
class TrainConfig:
    model: str = MF
    objective: str = obj.ERM
    cvib: CvibConfig | None = None
    lr: float = 0.01
    weight_decay: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 5
    rng_seed: int = 0
    dim: int = 4
    hidden: int = 8
    stochastic: bool = False
    select_metric: str = "loss"

    def __post_init__(self):
        if self.objective not in obj.OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.objective == obj.CVIB and self.cvib is None:
            object.__setattr__(self, "cvib", CvibConfig())
        if self.objective != obj.CVIB and self.cvib is not None:
            raise ValueError(f"CVIB settings given for objective {self.objective!r}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.select_metric not in ("loss", "auc"):
            raise ValueError("select_metric must be 'loss' or 'auc'")

    def flat(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "cvib"}
        if self.cvib is not None:
            out.update({k: v for k, v in asdict(self.cvib).items()})
        return out


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_score: float
    wall_time: float


@dataclass
class TrainResult:
    params: dict
    history: list
    best_epoch: int
    best_score: float
    imputer: dict | None = None
    stopped_early: bool = False


def history_to_csv(history) -> str:
    lines = ["epoch,train_loss,val_loss,val_score,wall_time"]
    lines += [f"{r.epoch},{r.train_loss:.10g},{r.val_loss:.10g},{r.val_score:.10g},{r.wall_time:.4f}" for r in history]
    return "\n".join(lines) + "\n"


class EarlyStopper:
    """Tracks the best (lowest) score; stops after ``patience`` epochs without a
    strict improvement."""

    def __init__(self, patience):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch, score) -> bool:
        """Record an epoch; return True when it is the new best."""
        if score < self.best:
            self.best, self.best_epoch, self.bad_epochs = score, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def validation_loss(params, val: InteractionTable) -> float:
    q = predict_proba(params, val.users, val.items)
    return float(np.mean(bce(val.y, q)))


def validation_score(params, val: InteractionTable, metric) -> tuple[float, float]:
    """Return ``(val_loss, selection score)``; lower scores are better."""
    q = predict_proba(params, val.users, val.items)
    loss = float(np.mean(bce(val.y, q)))
    if metric == "loss":
        return loss, loss
    try:
        return loss, -auc(q, val.y)
    except UndefinedMetricError:
        return loss, loss


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    return [perm[s:s + batch_size] for s in range(0, n, batch_size)]


def train(train_table: InteractionTable, val_table: InteractionTable, cfg: TrainConfig,
          propensities=None, params=None, imputer=None, on_epoch=None) -> TrainResult:
    """Fit one model and return the parameters of the best validation epoch.

    ``params`` / ``imputer`` override the seeded initialization. Doubly robust
    training without an explicit ``imputer`` first fits one by ERM on the same
    training split. ``on_epoch(record, params)`` is called after every epoch.
    """
    if train_table.n_observed == 0 or val_table.n_observed == 0:
        raise ValueError("train and validation tables must be non-empty")
    if cfg.objective in obj.PROPENSITY_OBJECTIVES and propensities is None:
        raise ValueError(f"objective {cfg.objective!r} needs propensities")
    U, I = train_table.num_users, train_table.num_items
    if params is None:
        params = init_params(cfg.model, U, I, cfg.dim, cfg.hidden, cfg.rng_seed, cfg.stochastic)
    rng = np.random.default_rng([cfg.rng_seed, 1])
    opt = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)

    # every logged event, train or validation, is factual
    logged = np.zeros(U * I, dtype=bool)
    logged[train_table.flat_index] = True
    logged[val_table.flat_index] = True

    step, batches = _make_step(train_table, val_table, cfg, propensities, logged, rng)
    imp_opt = None
    if cfg.objective in (obj.DR, obj.DRJL):
        if imputer is None and cfg.objective == obj.DR:
            imputer = train(train_table, val_table, replace(cfg, objective=obj.ERM)).params
        elif imputer is None:
            imputer = init_params(cfg.model, U, I, cfg.dim, cfg.hidden, cfg.rng_seed + 7919)
        imp_opt = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)

    stopper = EarlyStopper(cfg.patience)
    best = copy_params(params)
    history = []
    t0 = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        losses = [step(params, opt, imputer, imp_opt, batch) for batch in batches()]
        val_loss, score = validation_score(params, val_table, cfg.select_metric)
        history.append(EpochRecord(epoch, float(np.mean(losses)), val_loss, score, time.perf_counter() - t0))
        if on_epoch is not None:
            on_epoch(history[-1], params)
        if stopper.update(epoch, score):
            best = copy_params(params)
        if stopper.should_stop:
            break
    return TrainResult(best, history, stopper.best_epoch, stopper.best, imputer, stopper.should_stop)


def _make_step(train_table, val_table, cfg, propensities, logged, rng):
    users, items, y = train_table.users, train_table.items, train_table.y.astype(np.float64)
    n = train_table.n_observed
    U, I = train_table.num_users, train_table.num_items

    def factual_batches():
        return _batches(n, cfg.batch_size, rng)

    if cfg.objective in (obj.ERM, obj.IPS, obj.SNIPS):
        weights = None if cfg.objective == obj.ERM else propensities.lookup(y)

        def step(params, opt, imputer, imp_opt, idx):
            u, i = users[idx], items[idx]
            noise = sample_noise(params, len(idx), rng)
            _, q = forward(params, u, i, noise)
            if cfg.objective == obj.ERM:
                loss, g = obj.erm_loss(q, y[idx])
            elif cfg.objective == obj.IPS:
                loss, g = obj.ips_loss(q, y[idx], weights[idx])
            else:
                loss, g = obj.snips_loss(q, y[idx], weights[idx])
            adam_step(params, backward(params, u, i, g, noise), opt)
            return loss

        return step, factual_batches

    if cfg.objective == obj.CVIB:
        cvib = cfg.cvib
        # the counterfactual pool excludes every logged event
        pool = InteractionTable(U, I, np.flatnonzero(logged) // I, np.flatnonzero(logged) % I,
                                np.zeros(int(logged.sum())))

        def step(params, opt, imputer, imp_opt, idx):
            u, i = users[idx], items[idx]
            cu, ci = sample_counterfactual_batch(pool, len(idx), rng, observed_mask=logged)
            noise_pos = sample_noise(params, len(idx), rng)
            noise_neg = sample_noise(params, len(idx), rng)
            _, q_pos = forward(params, u, i, noise_pos)
            _, q_neg = forward(params, cu, ci, noise_neg)
            all_u, all_i = np.concatenate([u, cu]), np.concatenate([i, ci])
            if cvib.beta:
                norms, grads = minimality(params, all_u, all_i, scale=cvib.beta)
            else:
                norms, grads = 0.0, None
            res = obj.cvib_loss(q_pos, y[idx], q_neg, norms, cvib)
            grads = backward(params, u, i, res.grad_pos, noise_pos, grads)
            grads = backward(params, cu, ci, res.grad_neg, noise_neg, grads)
            adam_step(params, grads, opt)
            return res.loss

        return step, factual_batches

    # doubly robust: batches span the whole event space minus validation cells
    held_out = np.zeros(U * I, dtype=bool)
    held_out[val_table.flat_index] = True
    cells = np.flatnonzero(~held_out)
    obs_flat = np.zeros(U * I, dtype=bool)
    obs_flat[train_table.flat_index] = True
    y_flat = np.zeros(U * I)
    y_flat[train_table.flat_index] = y
    p_flat = np.ones(U * I)
    p_flat[train_table.flat_index] = propensities.lookup(y)
    n_steps = max(1, math.ceil(n / cfg.batch_size))

    def all_event_batches():
        return np.array_split(rng.permutation(cells), n_steps)

    def step(params, opt, imputer, imp_opt, flat):
        u, i = flat // I, flat % I
        o, yy, pp = obs_flat[flat], y_flat[flat], p_flat[flat]
        noise = sample_noise(params, len(flat), rng)
        if cfg.objective == obj.DRJL:
            return obj.drjl_step(params, imputer, u, i, o, yy, pp, opt, imp_opt, noise).model_loss
        _, q = forward(params, u, i, noise)
        r = predict_proba(imputer, u, i)
        loss, g, _ = obj.dr_loss(q, yy, o, r, pp)
        adam_step(params, backward(params, u, i, g, noise), opt)
        return loss

    return step, all_event_batches


# ---------------------------------------------------------------------------
# grid search

GRID_KEYS = ("lr", "weight_decay", "batch_size", "alpha", "gamma")


def default_grids(objective) -> dict:
    grids = {"lr": LR_GRID, "weight_decay": WEIGHT_DECAY_GRID, "batch_size": BATCH_SIZE_GRID}
    if objective == obj.CVIB:
        grids["alpha"] = obj.ALPHA_GRID
        grids["gamma"] = obj.GAMMA_GRID
    return grids


def expand_grid(base: TrainConfig, grids: dict) -> list[TrainConfig]:
    """Every configuration of the Cartesian product, in lexicographic grid order."""
    if not grids or any(len(v) == 0 for v in grids.values()):
        raise ValueError("grids must be non-empty")
    unknown = set(grids) - set(GRID_KEYS)
    if unknown:
        raise ValueError(f"unknown grid keys: {sorted(unknown)}")
    if base.objective != obj.CVIB and ({"alpha", "gamma"} & set(grids)):
        raise ValueError("alpha/gamma grids only apply to the cvib objective")
    keys = [k for k in GRID_KEYS if k in grids]
    configs = []
    for values in itertools.product(*(sorted(grids[k]) for k in keys)):
        point = dict(zip(keys, values))
        cvib_kw = {k: point.pop(k) for k in ("alpha", "gamma") if k in point}
        cfg = replace(base, **point)
        if cvib_kw:
            cfg = replace(cfg, cvib=replace(cfg.cvib or CvibConfig(), **cvib_kw))
        configs.append(cfg)
    return configs


def config_key(cfg: TrainConfig) -> tuple:
    flat = cfg.flat()
    return tuple(flat.get(k, 0.0) for k in GRID_KEYS)


@dataclass
class LeaderboardEntry:
    config: TrainConfig
    val_score: float
    best_epoch: int


def grid_search(train_table, val_table, base: TrainConfig, grids=None, propensities=None,
                completed=None, on_result=None):
    """Train every grid configuration and rank them by validation score.

    ``completed`` maps ``config_key`` to an already known ``(val_score,
    best_epoch)`` (e.g. read back from a journal) so those runs are skipped.
    ``on_result`` is called with each fresh LeaderboardEntry. Returns
    ``(best_config, leaderboard)``; ties go to the lexicographically smaller
    configuration.
    """
    grids = default_grids(base.objective) if grids is None else grids
    completed = completed or {}
    board = []
    for cfg in expand_grid(base, grids):
        key = config_key(cfg)
        if key in completed:
            score, best_epoch = completed[key]
            board.append(LeaderboardEntry(cfg, score, best_epoch))
            continue
        res = train(train_table, val_table, cfg, propensities)
        entry = LeaderboardEntry(cfg, res.best_score, res.best_epoch)
        board.append(entry)
        if on_result is not None:
            on_result(entry)
    board.sort(key=lambda e: (e.val_score, config_key(e.config)))
    return board[0].config, board


def grid_size(grids: dict) -> int:
    return math.prod(len(v) for v in grids.values())
