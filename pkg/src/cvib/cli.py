"""Command-line front end.

Subcommands: ``prepare``, ``synth``, ``train``, ``grid``, ``sweep`` and ``eval``.
Settings come from built-in defaults, then an optional INI file (``--config``),
then command-line flags. Every output file opens with a ``#`` block holding
the resolved settings, so a result can be traced back to how it was produced.

INI layout (all sections and keys optional)::

    [data]
    train = path            ; MNAR training log
    test = path             ; MAR test set
    format = matrix         ; matrix | triplet
    mar_fraction = 0.05     ; test share used to fit propensities, held out from eval
    mar_seed = 0            ; shuffle seed for that held-out share
    validation_fraction = 0.30

    [model]
    kind = mf               ; mf | ncf
    dim = 4
    hidden = 8
    stochastic = false

    [objective]
    kind = cvib             ; erm | cvib | ips | snips | dr | drjl
    alpha = 1.0             ; the next four keys are only valid for cvib
    beta = 0.0
    gamma = 0.001
    pairing = elementwise   ; elementwise | batch_mean

    [train]
    lr = 0.01
    weight_decay = 1e-4
    batch_size = 128
    max_epochs = 200
    patience = 5
    select_metric = loss    ; loss | auc

    [grid]                  ; comma-separated value lists
    lr = 0.1, 0.05, 0.01, 0.005, 0.001
    ...

    [sweep]
    alpha = 2, 1, 0.5, 0.1
    gamma = 1, 0.1, 0.01, 0.001
    fixed_alpha = 1.0
    fixed_gamma = 0.001

    [synth]
    num_users = 200
    num_items = 200
    latent_dim = 4
    policy_strength = 5.0
    observed_fraction = 0.05
    test_fraction = 0.10

    [run]
    seeds = 0, 1, 2
    out = runs/example
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .data import (
    FormatError,
    InteractionTable,
    SplitSpec,
    generate_synthetic_mnar,
    load_matrix_format,
    load_triplet_format,
    split_train_validation,
    write_dense_matrix,
    write_triplet_format,
)
from .evaluation import EvalReport, UndefinedMetricError, evaluate
from .models import KINDS, load_params, save_params
from .objectives import (
    ALPHA_GRID,
    BATCH_MEAN,
    CVIB,
    ELEMENTWISE,
    GAMMA_GRID,
    OBJECTIVES,
    PROPENSITY_OBJECTIVES,
    CvibConfig,
    estimate_propensities,
)
from .training import (
    GRID_KEYS,
    TrainConfig,
    config_key,
    default_grids,
    grid_search,
    history_to_csv,
    train,
)

FORMATS = ("matrix", "triplet")
CVIB_KEYS = ("alpha", "beta", "gamma", "pairing")
NDCG_KS = (5, 10)
CI_LEVEL = 0.90


class ConfigError(ValueError):
    """Invalid or inconsistent settings."""


# ---------------------------------------------------------------------------
# settings


@dataclass
class ExperimentConfig:
    train_path: str | None = None
    test_path: str | None = None
    data_format: str = "matrix"
    mar_fraction: float = 0.05
    mar_seed: int = 0
    validation_fraction: float = 0.30
    model: str = "mf"
    dim: int = 4
    hidden: int = 8
    stochastic: bool = False
    objective: str = CVIB
    cvib: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    grids: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    out: str = "runs"

    def validate(self, need_data=True):
        if self.model not in KINDS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.data_format not in FORMATS:
            raise ConfigError(f"unknown format {self.data_format!r}")
        if self.objective != CVIB and self.cvib:
            raise ConfigError(f"{', '.join(sorted(self.cvib))} only apply to the cvib objective, "
                              f"not {self.objective!r}")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if not 0.0 < self.mar_fraction < 1.0:
            raise ConfigError("mar_fraction must lie in (0, 1)")
        if need_data:
            for name, path in (("train", self.train_path), ("test", self.test_path)):
                if path is None:
                    raise ConfigError(f"no {name} path given")
                if not Path(path).exists():
                    raise ConfigError(f"{name} path does not exist: {path}")

    def train_config(self, seed) -> TrainConfig:
        cvib = None
        if self.objective == CVIB:
            cvib = CvibConfig(**{k: v for k, v in self.cvib.items()})
        try:
            return TrainConfig(model=self.model, objective=self.objective, cvib=cvib, rng_seed=seed,
                               dim=self.dim, hidden=self.hidden, stochastic=self.stochastic, **self.train)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def header(self, extra=()) -> list[str]:
        """The resolved settings as ``key = value`` lines."""
        lines = [f"cvib {__version__}"]
        for key in ("train_path", "test_path", "data_format", "mar_fraction", "mar_seed",
                    "validation_fraction", "model", "dim", "hidden", "stochastic", "objective"):
            lines.append(f"{key} = {getattr(self, key)}")
        if self.objective == CVIB:
            resolved = CvibConfig(**self.cvib)
            lines += [f"cvib.{k} = {getattr(resolved, k)}" for k in CVIB_KEYS]
        base = self.train_config(self.seeds[0])
        lines += [f"train.{k} = {getattr(base, k)}"
                  for k in ("lr", "weight_decay", "batch_size", "max_epochs", "patience", "select_metric")]
        for section in ("grids", "sweep", "synth"):
            for k, v in sorted(getattr(self, section).items()):
                lines.append(f"{section}.{k} = {_fmt_value(v)}")
        lines.append(f"seeds = {_fmt_value(self.seeds)}")
        lines.extend(extra)
        return lines


def _fmt_value(v):
    if isinstance(v, (list, tuple)):
        return ", ".join(str(x) for x in v)
    return str(v)


def _floats(text):
    return [float(t) for t in str(text).replace(",", " ").split()]


def _ints(text):
    return [int(t) for t in str(text).replace(",", " ").split()]


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


_TRAIN_TYPES = {"lr": float, "weight_decay": float, "batch_size": int, "max_epochs": int,
                "patience": int, "select_metric": str}
_SYNTH_TYPES = {"num_users": int, "num_items": int, "latent_dim": int, "policy_strength": float,
                "observed_fraction": float, "test_fraction": float}


def read_config(path) -> ExperimentConfig:
    """Parse an INI file into an ExperimentConfig (relative data paths resolve
    against the file's directory)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    known = {"data", "model", "objective", "train", "grid", "sweep", "synth", "run"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")

    cfg = ExperimentConfig()
    try:
        if parser.has_section("data"):
            d = parser["data"]
            for key, attr in (("train", "train_path"), ("test", "test_path")):
                if key in d:
                    p = Path(d[key])
                    setattr(cfg, attr, str(p if p.is_absolute() else path.parent / p))
            cfg.data_format = d.get("format", cfg.data_format)
            cfg.mar_fraction = d.getfloat("mar_fraction", cfg.mar_fraction)
            cfg.mar_seed = d.getint("mar_seed", cfg.mar_seed)
            cfg.validation_fraction = d.getfloat("validation_fraction", cfg.validation_fraction)
        if parser.has_section("model"):
            m = parser["model"]
            cfg.model = m.get("kind", cfg.model)
            cfg.dim = m.getint("dim", cfg.dim)
            cfg.hidden = m.getint("hidden", cfg.hidden)
            cfg.stochastic = _bool(m.get("stochastic", str(cfg.stochastic)))
        if parser.has_section("objective"):
            o = parser["objective"]
            cfg.objective = o.get("kind", cfg.objective)
            for k in CVIB_KEYS:
                if k in o:
                    cfg.cvib[k] = o[k] if k == "pairing" else float(o[k])
        if parser.has_section("train"):
            for k, v in parser["train"].items():
                if k not in _TRAIN_TYPES:
                    raise ConfigError(f"{path}: unknown key train.{k}")
                cfg.train[k] = _TRAIN_TYPES[k](v)
        if parser.has_section("grid"):
            for k, v in parser["grid"].items():
                if k not in GRID_KEYS:
                    raise ConfigError(f"{path}: unknown key grid.{k}")
                cfg.grids[k] = _ints(v) if k == "batch_size" else _floats(v)
        if parser.has_section("sweep"):
            s = parser["sweep"]
            for k in ("alpha", "gamma"):
                if k in s:
                    cfg.sweep[k] = _floats(s[k])
            for k in ("fixed_alpha", "fixed_gamma"):
                if k in s:
                    cfg.sweep[k] = float(s[k])
        if parser.has_section("synth"):
            for k, v in parser["synth"].items():
                if k not in _SYNTH_TYPES:
                    raise ConfigError(f"{path}: unknown key synth.{k}")
                cfg.synth[k] = _SYNTH_TYPES[k](v)
        if parser.has_section("run"):
            r = parser["run"]
            if "seeds" in r:
                cfg.seeds = _ints(r["seeds"])
            cfg.out = r.get("out", cfg.out)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None
    return cfg


def resolve(args) -> ExperimentConfig:
    cfg = read_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    for flag, attr in (("train", "train_path"), ("test", "test_path"), ("format", "data_format"),
                       ("model", "model"), ("objective", "objective"), ("out", "out")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, attr, value)
    for k in CVIB_KEYS:
        value = getattr(args, k, None)
        if value is not None:
            cfg.cvib[k] = value
    for k in ("lr", "weight_decay", "batch_size", "max_epochs", "patience"):
        value = getattr(args, k, None)
        if value is not None:
            cfg.train[k] = value
    if getattr(args, "seed", None) is not None:
        cfg.seeds = args.seed
    return cfg


# ---------------------------------------------------------------------------
# data plumbing


def load_table(path, fmt) -> InteractionTable:
    return load_matrix_format(path) if fmt == "matrix" else load_triplet_format(path)


@dataclass
class Dataset:
    train: InteractionTable
    test: InteractionTable      # evaluation part of the MAR data
    calibration: InteractionTable  # held-out MAR share used for propensities


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    """Load the MNAR log and MAR test set and carve off the calibration share.

    The calibration rows are the first ``mar_fraction`` of the test events
    after a shuffle seeded by ``mar_seed``; they never reach evaluation.
    """
    mnar = load_table(cfg.train_path, cfg.data_format)
    mar = load_table(cfg.test_path, cfg.data_format)
    if (mnar.num_users, mnar.num_items) != (mar.num_users, mar.num_items):
        # triplet files without headers infer their universe; align to the larger one
        U, I = max(mnar.num_users, mar.num_users), max(mnar.num_items, mar.num_items)
        mnar = InteractionTable(U, I, mnar.users, mnar.items, mnar.y, mnar.ratings)
        mar = InteractionTable(U, I, mar.users, mar.items, mar.y, mar.ratings)
    return split_mar(mnar, mar, cfg.mar_fraction, cfg.mar_seed)


def split_mar(mnar, mar, fraction, seed) -> Dataset:
    n = mar.n_observed
    n_cal = min(max(int(math.floor(fraction * n + 0.5)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return Dataset(mnar, mar.subset(np.sort(perm[n_cal:])), mar.subset(np.sort(perm[:n_cal])))


def _comment_block(lines):
    return "".join(f"# {line}\n" for line in lines)


def _write(path, header, body):
    Path(path).write_text(_comment_block(header) + body)


def _propensities(cfg, ds):
    """Naive-Bayes propensities from the whole MNAR log and the calibration share."""
    if cfg.objective not in PROPENSITY_OBJECTIVES:
        return None
    return estimate_propensities(ds.train, ds.calibration)


def mean_std(values):
    values = np.asarray(values, dtype=np.float64)
    std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return float(values.mean()), std


def t_interval(values, level=CI_LEVEL):
    """Two-sided t confidence interval of the mean; a single value is its own interval."""
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    if len(values) < 2:
        return mean, mean, mean
    half = stats.t.ppf(0.5 + level / 2, len(values) - 1) * values.std(ddof=1) / math.sqrt(len(values))
    return mean, mean - half, mean + half


# ---------------------------------------------------------------------------
# commands


def cmd_prepare(args):
    cfg = resolve(args)
    cfg.validate(need_data=False)
    if cfg.train_path is None:
        raise ConfigError("no train path given")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    table = load_table(cfg.train_path, cfg.data_format)
    seed = cfg.seeds[0]
    tr, va = split_train_validation(table, SplitSpec(cfg.validation_fraction, seed))
    header = cfg.header([f"split_seed = {seed}"])
    write_triplet_format(tr, out / "train.txt", comments=header)
    write_triplet_format(va, out / "val.txt", comments=header)
    summary = {
        "num_users": table.num_users,
        "num_items": table.num_items,
        "n_observed": table.n_observed,
        "n_train": tr.n_observed,
        "n_val": va.n_observed,
        "observed_fraction": table.n_observed / (table.num_users * table.num_items),
        "observed_ctr": table.positive_rate(),
    }
    if cfg.test_path is not None:
        test = load_table(cfg.test_path, cfg.data_format)
        write_triplet_format(test, out / "test.txt", comments=header)
        summary["n_test"] = test.n_observed
        summary["positive_rate"] = test.positive_rate()
    text = _kv(summary)
    _write(out / "summary.txt", header, text)
    sys.stdout.write(text)
    return 0


def _kv(d):
    return "".join(f"{k} {v:.17g}\n" if isinstance(v, float) else f"{k} {v}\n" for k, v in d.items())


def cmd_synth(args):
    cfg = resolve(args)
    cfg.validate(need_data=False)
    s = {"num_users": 200, "num_items": 200, "latent_dim": 4, "policy_strength": 5.0,
         "observed_fraction": 0.05, "test_fraction": 0.10}
    s.update(cfg.synth)
    for k in s:
        value = getattr(args, k, None)
        if value is not None:
            s[k] = value
    cfg.synth = s
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seeds[0]
    train_t, test_t, truth = generate_synthetic_mnar(
        s["num_users"], s["num_items"], s["latent_dim"], s["policy_strength"],
        s["observed_fraction"], seed, s["test_fraction"])
    header = cfg.header([f"synth_seed = {seed}"])
    write_triplet_format(train_t, out / "train.txt", comments=header)
    write_triplet_format(test_t, out / "test.txt", comments=header)
    write_dense_matrix(truth.true_prob, out / "true_prob.txt")
    write_dense_matrix(truth.policy_prob, out / "policy_prob.txt")
    summary = {
        "n_train": train_t.n_observed,
        "n_test": test_t.n_observed,
        "observed_ctr": train_t.positive_rate(),
        "true_ctr": float(truth.true_prob.mean()),
        "realized_ctr": float(truth.outcomes.mean()),
        "test_ctr": test_t.positive_rate(),
        "bias": train_t.positive_rate() - float(truth.true_prob.mean()),
        "mean_policy_prob": float(truth.policy_prob.mean()),
    }
    text = _kv(summary)
    _write(out / "summary.txt", header, text)
    sys.stdout.write(text)
    return 0


def run_seed(cfg: ExperimentConfig, ds: Dataset, seed, tcfg=None):
    """Train and evaluate one seed; returns ``(TrainResult, EvalReport, propensities)``."""
    tcfg = tcfg or cfg.train_config(seed)
    tr, va = split_train_validation(ds.train, SplitSpec(cfg.validation_fraction, seed))
    props = _propensities(cfg, ds)
    res = train(tr, va, tcfg, props)
    return res, evaluate(res.params, ds.test, NDCG_KS), props


def cmd_train(args):
    cfg = resolve(args)
    cfg.validate()
    ds = load_dataset(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    header = cfg.header(_mar_header(ds))
    reports = []
    for seed in cfg.seeds:
        res, report, props = run_seed(cfg, ds, seed)
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(exist_ok=True)
        seed_header = header + [f"seed = {seed}", f"best_epoch = {res.best_epoch}"]
        save_params(res.params, seed_dir / "params.txt")
        _write(seed_dir / "history.csv", seed_header, history_to_csv(res.history))
        _write(seed_dir / "report.txt", seed_header, report.to_text())
        if props is not None:
            _write(seed_dir / "propensities.txt", seed_header, props.to_text())
        reports.append(report)
        print(f"seed {seed}: auc {report.auc:.4f} mse {report.mse:.4f} "
              f"ndcg@5 {report.ndcg_at[5]:.4f} ndcg@10 {report.ndcg_at[10]:.4f} (epoch {res.best_epoch})")
    text = aggregate_text(reports)
    _write(out / "aggregate.txt", header, text)
    sys.stdout.write(text)
    return 0


def _mar_header(ds):
    return [f"mar_calibration_events = {ds.calibration.n_observed} (held out from evaluation)",
            f"mar_eval_events = {ds.test.n_observed}"]


def aggregate_text(reports) -> str:
    """``metric mean std n`` lines over the per-seed reports."""
    rows = []
    for key in reports[0].to_dict():
        if key in ("n_test", "n_users_ranked"):
            continue
        mean, std = mean_std([r.to_dict()[key] for r in reports])
        rows.append(f"{key} {mean:.17g} {std:.17g} {len(reports)}\n")
    return "# metric mean std n_seeds\n" + "".join(rows)


LEADERBOARD_FIELDS = list(GRID_KEYS) + ["val_score", "best_epoch"]


def _read_journal(path):
    completed = {}
    if not path.exists():
        return completed
    rows = [line for line in path.read_text().splitlines() if line and not line.startswith("#")]
    for row in csv.DictReader(rows):
        key = tuple(float(row[k]) if k != "batch_size" else int(row[k]) for k in GRID_KEYS)
        completed[key] = (float(row["val_score"]), int(row["best_epoch"]))
    return completed


def _entry_row(entry):
    key = config_key(entry.config)
    return dict(zip(GRID_KEYS, key)) | {"val_score": f"{entry.val_score:.17g}", "best_epoch": entry.best_epoch}


def cmd_grid(args):
    cfg = resolve(args)
    cfg.validate()
    ds = load_dataset(cfg)
    grids = dict(default_grids(cfg.objective))
    grids.update(cfg.grids)
    if cfg.objective != CVIB:
        grids = {k: v for k, v in grids.items() if k not in ("alpha", "gamma")}
        if {"alpha", "gamma"} & set(cfg.grids):
            raise ConfigError("alpha/gamma grids only apply to the cvib objective")
    cfg.grids = grids
    seed = cfg.seeds[0]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    header = cfg.header(_mar_header(ds) + [f"seed = {seed}"])

    tr, va = split_train_validation(ds.train, SplitSpec(cfg.validation_fraction, seed))
    props = _propensities(cfg, ds)
    journal = out / "journal.csv"
    completed = _read_journal(journal)
    if not journal.exists():
        _write(journal, header, ",".join(LEADERBOARD_FIELDS) + "\n")

    def record(entry):
        with open(journal, "a", newline="") as fh:
            csv.DictWriter(fh, LEADERBOARD_FIELDS).writerow(_entry_row(entry))

    if completed:
        print(f"resuming: {len(completed)} configurations already in {journal}")
    best, board = grid_search(tr, va, cfg.train_config(seed), grids, props, completed, record)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, ["rank"] + LEADERBOARD_FIELDS, lineterminator="\n")
    writer.writeheader()
    for rank, entry in enumerate(board, start=1):
        writer.writerow({"rank": rank} | _entry_row(entry))
    _write(out / "leaderboard.csv", header, buf.getvalue())
    best_lines = [f"{k} = {v}" for k, v in zip(GRID_KEYS, config_key(best))]
    _write(out / "best.txt", header, "\n".join(best_lines) + "\n")
    print(f"{len(board)} configurations; best: " + ", ".join(best_lines))
    return 0


def cmd_sweep(args):
    cfg = resolve(args)
    if cfg.objective != CVIB:
        raise ConfigError("the sweep varies alpha and gamma, so it needs the cvib objective")
    cfg.validate()
    ds = load_dataset(cfg)
    sw = {"alpha": list(ALPHA_GRID), "gamma": list(GAMMA_GRID), "fixed_alpha": 1.0, "fixed_gamma": 1e-3}
    sw.update(cfg.sweep)
    cfg.sweep = sw
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    header = cfg.header(_mar_header(ds) + [f"interval = {CI_LEVEL:.0%} t-interval over seeds"])

    rows = []
    ranges = {}
    for varied, fixed_key, fixed in (("alpha", "gamma", sw["fixed_gamma"]), ("gamma", "alpha", sw["fixed_alpha"])):
        means = []
        for value in sw[varied]:
            aucs = []
            for seed in cfg.seeds:
                cv = dict(cfg.cvib) | {varied: value, fixed_key: fixed}
                tcfg = replace(cfg.train_config(seed), cvib=CvibConfig(**cv))
                aucs.append(run_seed(cfg, ds, seed, tcfg)[1].auc)
            mean, lo, hi = t_interval(aucs)
            means.append(mean)
            rows.append((varied, value, fixed_key, fixed, mean, lo, hi, len(aucs)))
            print(f"{varied} {value:g}: auc {mean:.4f} [{lo:.4f}, {hi:.4f}]")
        ranges[varied] = max(means) - min(means)
    body = "varied,value,fixed,fixed_value,mean_auc,ci_low,ci_high,n_seeds\n"
    body += "".join(f"{v},{x:g},{fk},{fx:g},{m:.17g},{lo:.17g},{hi:.17g},{n}\n"
                    for v, x, fk, fx, m, lo, hi, n in rows)
    _write(out / "sweep.csv", header, body)
    summary = f"alpha_range {ranges['alpha']:.17g}\ngamma_range {ranges['gamma']:.17g}\n"
    _write(out / "sweep_summary.txt", header, summary)
    sys.stdout.write(summary)
    return 0


def cmd_eval(args):
    cfg = resolve(args)
    cfg.validate(need_data=False)
    if cfg.test_path is None:
        raise ConfigError("no test path given")
    params = load_params(args.checkpoint)
    test = load_table(cfg.test_path, cfg.data_format)
    if cfg.train_path is not None:
        # drop the calibration share exactly as training did
        test = split_mar(load_table(cfg.train_path, cfg.data_format), test, cfg.mar_fraction, cfg.mar_seed).test
    n_u, n_i = len(params["user_emb"]), len(params["item_emb"])
    if test.num_users > n_u or test.num_items > n_i:
        raise ConfigError(f"test universe {test.num_users}x{test.num_items} exceeds the model's {n_u}x{n_i}")
    report = evaluate(params, test, NDCG_KS)
    text = report.to_text()
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "report.txt", [f"checkpoint = {args.checkpoint}", f"test_path = {cfg.test_path}"], text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _seed_list(text):
    try:
        seeds = _ints(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a seed list: {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def build_parser():
    parser = argparse.ArgumentParser(prog="cvib", description="Debiased recommendation experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, model=True):
        p.add_argument("--config", help="INI settings file")
        p.add_argument("--seed", type=_seed_list, help="seed or comma-separated seeds")
        p.add_argument("--out", help="output directory")
        if data:
            p.add_argument("--train", help="MNAR training file")
            p.add_argument("--test", help="MAR test file")
            p.add_argument("--format", choices=FORMATS)
        if model:
            p.add_argument("--model", choices=KINDS)
            p.add_argument("--objective", choices=OBJECTIVES)
            p.add_argument("--alpha", type=float)
            p.add_argument("--beta", type=float)
            p.add_argument("--gamma", type=float)
            p.add_argument("--pairing", choices=(ELEMENTWISE, BATCH_MEAN))
            p.add_argument("--lr", type=float)
            p.add_argument("--weight-decay", dest="weight_decay", type=float)
            p.add_argument("--batch-size", dest="batch_size", type=int)
            p.add_argument("--max-epochs", dest="max_epochs", type=int)
            p.add_argument("--patience", type=int)
        return p

    p = common(sub.add_parser("prepare", help="load, binarize and split a dataset"), model=False)
    p.set_defaults(func=cmd_prepare)

    p = common(sub.add_parser("synth", help="generate a synthetic MNAR dataset"), data=False, model=False)
    p.add_argument("--num-users", dest="num_users", type=int)
    p.add_argument("--num-items", dest="num_items", type=int)
    p.add_argument("--latent-dim", dest="latent_dim", type=int)
    p.add_argument("--policy-strength", dest="policy_strength", type=float)
    p.add_argument("--observed-fraction", dest="observed_fraction", type=float)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.set_defaults(func=cmd_synth)

    common(sub.add_parser("train", help="train and evaluate over seeds")).set_defaults(func=cmd_train)
    common(sub.add_parser("grid", help="grid search on the validation split")).set_defaults(func=cmd_grid)
    common(sub.add_parser("sweep", help="alpha and gamma sensitivity")).set_defaults(func=cmd_sweep)

    p = common(sub.add_parser("eval", help="evaluate a checkpoint"), model=False)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, UndefinedMetricError, ValueError, IndexError, OSError) as exc:
        print(f"cvib {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
