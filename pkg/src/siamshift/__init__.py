"""Similarity learning for binary classification under domain shift.

A Siamese network learns whether two images share a class; a query is
classified by its mean (or voted) similarity to a few random training
exemplars of each class. A direct single-image classifier serves as the
baseline.
"""

from . import backbone, consensus, data, experiments, models
from .consensus import ALL, AVERAGE, VOTE, ConsensusPolicy, classify, sample_exemplars
from .experiments import TrainConfig, pretrain_then_finetune, train_direct, train_siamese
from .models import DirectClassifier, EncoderConfig, SiameseSimilarity, load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "ALL",
    "AVERAGE",
    "VOTE",
    "ConsensusPolicy",
    "DirectClassifier",
    "EncoderConfig",
    "SiameseSimilarity",
    "TrainConfig",
    "backbone",
    "classify",
    "consensus",
    "data",
    "experiments",
    "load_model",
    "models",
    "pretrain_then_finetune",
    "sample_exemplars",
    "save_model",
    "train_direct",
    "train_siamese",
]
