"""Debiased recommendation on missing-not-at-random feedback with the
counterfactual variational information bottleneck objective."""

from .core import EPS, DomainError, bce, entropy, gaussian_kl, sigmoid, xent
from .data import (
    FormatError,
    InteractionTable,
    SplitSpec,
    SynthGroundTruth,
    generate_synthetic_mnar,
    load_matrix_format,
    load_triplet_format,
    sample_counterfactual_batch,
    split_train_validation,
    write_triplet_format,
)
from .evaluation import EvalReport, auc, evaluate, mse, ndcg_at_k
from .models import init_params, load_params, save_params
from .objectives import CvibConfig, Propensities, estimate_propensities
from .training import TrainConfig, grid_search, train

__version__ = "0.1.0"
