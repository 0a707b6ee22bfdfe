"""Sparse online learning for linear models with truncated gradient updates."""

__version__ = "0.1.0"

from .data import SparseExample, generate_synthetic, parse_line, read_examples, scan_meta
from .evaluation import auc, cross_validate, sparsity_frontier
from .learner import LearnerConfig, Rule, SparseLearner, read_model, train, write_model
from .loss import LossKind, assumption_constants, loss_gradient_score, loss_value
from .reference import eager_reference_train
from .truncation import INF, gravity_schedule, truncate_gravity, truncate_round

__all__ = [
    "INF",
    "LearnerConfig",
    "LossKind",
    "Rule",
    "SparseExample",
    "SparseLearner",
    "assumption_constants",
    "auc",
    "cross_validate",
    "eager_reference_train",
    "generate_synthetic",
    "gravity_schedule",
    "loss_gradient_score",
    "loss_value",
    "parse_line",
    "read_examples",
    "read_model",
    "scan_meta",
    "sparsity_frontier",
    "train",
    "truncate_gravity",
    "truncate_round",
    "write_model",
]
