"""Predictors, accuracy, and agreement between two predictors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from ..consensus import ClassificationOutcome, ConsensusPolicy, EmbeddingCache, classify_table
from ..data.table import DatasetTable
from ..errors import DomainError
from ..models import DirectClassifier, SiameseSimilarity


class Predictor(Protocol):
    def predict(self, table: DatasetTable) -> np.ndarray: ...


class DirectPredictor:
    """Thresholds the direct classifier's score (class 1 iff score > threshold)."""

    def __init__(self, model: DirectClassifier, threshold: float = 0.5):
        self.model = model
        self.threshold = threshold

    def predict(self, table: DatasetTable) -> np.ndarray:
        return (self.model.predict_proba(table.pixels()) > self.threshold).astype(np.int64)


class ConsensusPredictor:
    """Similarity consensus against ``train`` exemplars.

    Encoder outputs are cached per image, so ``k="all"`` costs one encoder
    pass per image plus one head pass per pair. The outcomes of the last
    call are kept in ``self.outcomes``.
    """

    def __init__(self, model: SiameseSimilarity, train: DatasetTable, policy: ConsensusPolicy, cache: bool = True):
        self.model = model
        self.train = train
        self.policy = policy
        self.cache = cache
        self.outcomes: list[ClassificationOutcome] = []

    def predict(self, table: DatasetTable) -> np.ndarray:
        scorer = EmbeddingCache(self.model, [self.train, table]) if self.cache else self.model
        self.outcomes = classify_table(table, self.policy, scorer, self.train)
        return np.array([o.predicted for o in self.outcomes], dtype=np.int64)


def _predictions(predictor, table: DatasetTable) -> np.ndarray:
    pred = predictor.predict(table) if hasattr(predictor, "predict") else predictor(table)
    pred = np.asarray(pred, dtype=np.int64)
    if pred.shape != (len(table),):
        raise DomainError(f"predictor returned {pred.shape}, expected ({len(table)},)")
    return pred


@dataclass
class EvalResult:
    accuracy: float
    per_class_recall: dict[int, float]
    predictions: np.ndarray = field(repr=False)
    correct: np.ndarray = field(repr=False)


def accuracy_from_predictions(pred: np.ndarray, labels: np.ndarray) -> EvalResult:
    pred, labels = np.asarray(pred), np.asarray(labels)
    if not len(labels):
        raise DomainError("cannot evaluate on an empty test set")
    correct = pred == labels
    recall = {int(c): float(correct[labels == c].mean()) for c in np.unique(labels)}
    return EvalResult(float(correct.mean()), recall, pred, correct)


def evaluate_accuracy(predictor, test: DatasetTable) -> EvalResult:
    """Fraction correct plus per-class recall.

    ``predictor`` has ``predict(table)`` or is a callable on the table.
    """
    if not len(test):
        raise DomainError("cannot evaluate on an empty test set")
    return accuracy_from_predictions(_predictions(predictor, test), test.labels)


@dataclass(frozen=True)
class Agreement:
    """Disjoint outcome fractions for two predictors on one test set."""

    both_correct: float
    only_a: float
    only_b: float
    both_wrong: float
    n: int

    @property
    def accuracy_a(self) -> float:
        return self.both_correct + self.only_a

    @property
    def accuracy_b(self) -> float:
        return self.both_correct + self.only_b

    @property
    def same_answer(self) -> float:
        """Fraction where both give the same label (binary task)."""
        return self.both_correct + self.both_wrong

    def to_dict(self) -> dict[str, float]:
        return {
            "both_correct": self.both_correct,
            "only_a": self.only_a,
            "only_b": self.only_b,
            "both_wrong": self.both_wrong,
            "n": self.n,
        }


def agreement_from_correctness(correct_a: Sequence[bool], correct_b: Sequence[bool]) -> Agreement:
    a = np.asarray(correct_a, dtype=bool)
    b = np.asarray(correct_b, dtype=bool)
    if a.shape != b.shape or not len(a):
        raise DomainError("correctness vectors must be non-empty and equally long")
    n = len(a)
    counts = [np.sum(a & b), np.sum(a & ~b), np.sum(~a & b), np.sum(~a & ~b)]
    return Agreement(*(float(c) / n for c in counts), n=n)


def agreement_analysis(predictor_a, predictor_b, test: DatasetTable) -> Agreement:
    labels = test.labels
    return agreement_from_correctness(
        _predictions(predictor_a, test) == labels, _predictions(predictor_b, test) == labels
    )


def agreement_from_logs(records_a: Sequence[dict], records_b: Sequence[dict]) -> Agreement:
    """Replay two outcome logs (matched on ``query_id``)."""
    b_by_id = {r["query_id"]: r for r in records_b}
    if set(b_by_id) != {r["query_id"] for r in records_a}:
        raise DomainError("outcome logs cover different queries")
    ca = [r["predicted"] == r["true"] for r in records_a]
    cb = [b_by_id[r["query_id"]]["predicted"] == b_by_id[r["query_id"]]["true"] for r in records_a]
    return agreement_from_correctness(ca, cb)
