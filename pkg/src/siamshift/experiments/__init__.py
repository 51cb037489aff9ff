"""Training, evaluation, and experiment protocols."""

from .evaluation import (
    Agreement,
    ConsensusPredictor,
    DirectPredictor,
    EvalResult,
    accuracy_from_predictions,
    agreement_analysis,
    agreement_from_correctness,
    agreement_from_logs,
    evaluate_accuracy,
)
from .reports import ExperimentReport, config_hash, write_loss_curve
from .studies import (
    MultiSplitResult,
    derive_seed,
    direct_method,
    grid_search_l2,
    multi_split_experiment,
    regularised_direct_method,
    siamese_method,
)
from .training import (
    TrainConfig,
    TrainRun,
    check_disjoint,
    pretrain_then_finetune,
    train_direct,
    train_siamese,
    weight_norm,
)

__all__ = [
    "Agreement",
    "ConsensusPredictor",
    "DirectPredictor",
    "EvalResult",
    "ExperimentReport",
    "MultiSplitResult",
    "TrainConfig",
    "TrainRun",
    "accuracy_from_predictions",
    "agreement_analysis",
    "agreement_from_correctness",
    "agreement_from_logs",
    "check_disjoint",
    "config_hash",
    "derive_seed",
    "direct_method",
    "evaluate_accuracy",
    "grid_search_l2",
    "multi_split_experiment",
    "pretrain_then_finetune",
    "regularised_direct_method",
    "siamese_method",
    "train_direct",
    "train_siamese",
    "weight_norm",
    "write_loss_curve",
]
