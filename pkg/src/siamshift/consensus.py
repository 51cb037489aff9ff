"""Classification by consensus over similarities to sampled exemplars.

A query is compared with ``k`` random training exemplars per class. The
``average`` rule scores each class by its mean similarity; the ``vote``
rule counts similarities strictly above a threshold. The higher score
wins. Ties in votes fall back to average scores, and exact ties in
average scores go to the lowest class label; either way the outcome is
flagged ``tie_broken``.

The ``model`` in this module is anything with
``pair_scores(a, b) -> np.ndarray``, taking two equally sized
``[N, D, H, W]`` image batches.
"""

from __future__ import annotations

import json
import math
import os
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .data.table import DatasetTable
from .errors import DomainError

AVERAGE = "average"
VOTE = "vote"
RULES = (AVERAGE, VOTE)
ALL = "all"


class SimilarityModel(Protocol):
    def pair_scores(self, a: np.ndarray, b: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class ExemplarSet:
    """Per-class row positions into ``table``."""

    table: DatasetTable
    members: Mapping[int, np.ndarray]

    def __post_init__(self):
        for c, idx in self.members.items():
            if len(idx) < 1:
                raise DomainError(f"class {c} has no exemplars")

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(sorted(self.members))

    def images(self, c: int) -> np.ndarray:
        return self.table.pixels()[self.members[c]]

    def ids(self, c: int) -> list[str]:
        return [self.table.images[i].id for i in self.members[c]]


@dataclass(frozen=True)
class ConsensusPolicy:
    rule: str = AVERAGE
    k: int | str = 1
    resample_per_query: bool = True
    seed: int = 0
    vote_threshold: float = 0.5

    def __post_init__(self):
        rule = self.rule.lower()
        if rule not in RULES:
            raise DomainError(f"rule must be one of {RULES}, got {self.rule!r}")
        object.__setattr__(self, "rule", rule)
        k = self.k
        if isinstance(k, str):
            if k.lower() != ALL:
                k = int(k)
            else:
                k = ALL
        if k != ALL and (int(k) != k or k < 1):
            raise DomainError(f"k must be a positive integer or 'all', got {self.k!r}")
        object.__setattr__(self, "k", k if k == ALL else int(k))

    def check(self, train: DatasetTable) -> None:
        if self.k != ALL:
            for c, members in train.by_label.items():
                if len(members) < self.k:
                    raise DomainError(f"k={self.k} exceeds the {len(members)} training images of class {c}")


@dataclass
class ClassificationOutcome:
    scores: dict[int, float]
    predicted: int
    similarities: dict[int, np.ndarray]
    tie_broken: bool = False
    rule: str = AVERAGE
    votes: dict[int, int] | None = None
    exemplar_ids: dict[int, list[str]] = field(default_factory=dict)


def sample_exemplars(train: DatasetTable, k: int | str, seed=0) -> ExemplarSet:
    """Uniform draw of ``k`` exemplars per class without replacement.

    ``seed`` may be an int, a sequence of ints, or a ``numpy`` Generator.
    """
    members = {}
    if k == ALL:
        for c, idx in train.by_label.items():
            members[c] = np.array(idx)
        return ExemplarSet(train, members)
    if int(k) != k or k < 1:
        raise DomainError(f"k must be a positive integer or 'all', got {k!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for c, idx in train.by_label.items():
        if len(idx) < k:
            raise DomainError(f"k={k} exceeds the {len(idx)} training images of class {c}")
        members[c] = rng.choice(np.array(idx), size=int(k), replace=False)
    return ExemplarSet(train, members)


def _query_batch(query) -> np.ndarray:
    arr = getattr(query, "pixels", query)
    arr = np.asarray(arr, dtype=np.float32)
    return arr[None] if arr.ndim == 3 else arr


def exemplar_similarities(query, exemplars: ExemplarSet, model: SimilarityModel) -> dict[int, np.ndarray]:
    """One batched forward pass per class: ``F(query, R_j)`` for every exemplar."""
    q = _query_batch(query)
    out = {}
    for c in exemplars.classes:
        ref = exemplars.images(c)
        out[c] = np.asarray(model.pair_scores(np.repeat(q, len(ref), axis=0), ref), dtype=np.float64)
    return out


def _mean(s) -> float:
    # correctly rounded, so the score does not depend on exemplar order
    s = np.asarray(s, dtype=np.float64)
    return math.fsum(s.tolist()) / len(s)


def _resolve_average(scores: Mapping[int, float]) -> tuple[int, bool]:
    best = max(scores.values())
    top = sorted(c for c, s in scores.items() if s == best)
    return top[0], len(top) > 1


def average_rule(similarities: Mapping[int, np.ndarray]) -> ClassificationOutcome:
    scores = {c: _mean(s) for c, s in sorted(similarities.items())}
    predicted, tie = _resolve_average(scores)
    return ClassificationOutcome(scores, predicted, dict(similarities), tie, AVERAGE)


def vote_rule(similarities: Mapping[int, np.ndarray], threshold: float = 0.5) -> ClassificationOutcome:
    scores = {c: _mean(s) for c, s in sorted(similarities.items())}
    votes = {c: int(np.sum(np.asarray(s) > threshold)) for c, s in sorted(similarities.items())}
    best = max(votes.values())
    top = [c for c, v in votes.items() if v == best]
    if len(top) == 1:
        predicted, tie = top[0], False
    else:
        predicted, _ = _resolve_average({c: scores[c] for c in top})
        tie = True
    return ClassificationOutcome(scores, predicted, dict(similarities), tie, VOTE, votes)


def score_average(query, exemplars: ExemplarSet, model: SimilarityModel) -> ClassificationOutcome:
    """Mean similarity per class; ``outcome.scores[c]`` is ``S_c``."""
    out = average_rule(exemplar_similarities(query, exemplars, model))
    out.exemplar_ids = {c: exemplars.ids(c) for c in exemplars.classes}
    return out


def score_vote(query, exemplars: ExemplarSet, model: SimilarityModel, threshold: float = 0.5) -> ClassificationOutcome:
    """Votes per class in ``outcome.votes``; average scores kept for tie-breaking."""
    out = vote_rule(exemplar_similarities(query, exemplars, model), threshold)
    out.exemplar_ids = {c: exemplars.ids(c) for c in exemplars.classes}
    return out


def query_rng(seed: int, query_id: str) -> np.random.Generator:
    """RNG keyed on (seed, query id), independent of processing order."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(query_id.encode())])


def classify(
    query, policy: ConsensusPolicy, model: SimilarityModel, train: DatasetTable,
    exemplars: ExemplarSet | None = None,
) -> ClassificationOutcome:
    """Classify one query (a :class:`LabeledImage` or a ``[D, H, W]`` array).

    With ``resample_per_query`` a fresh exemplar set is drawn from an RNG
    keyed on the query id; otherwise ``exemplars`` (or one set drawn from
    ``policy.seed``) is reused.
    """
    policy.check(train)
    if exemplars is None:
        if policy.resample_per_query and policy.k != ALL:
            qid = getattr(query, "id", None)
            if qid is None:
                raise DomainError("resampling per query needs a query with an id")
            exemplars = sample_exemplars(train, policy.k, query_rng(policy.seed, qid))
        else:
            exemplars = sample_exemplars(train, policy.k, policy.seed)
    if policy.rule == AVERAGE:
        return score_average(query, exemplars, model)
    return score_vote(query, exemplars, model, policy.vote_threshold)


class EmbeddingCache:
    """Wraps a Siamese model so encoder outputs are computed once per image.

    Exposes ``pair_scores`` like the model itself, but expects the images to
    be rows of the registered tables; lookup is by pixel-buffer identity
    first and falls back to a full forward pass.
    """

    def __init__(self, model, tables: Iterable[DatasetTable]):
        self.model = model
        self._emb: dict[bytes, np.ndarray] = {}
        for t in tables:
            px = t.pixels()
            emb = model.embed(px)
            for row, e in zip(px, emb):
                self._emb[row.tobytes()] = e

    def _lookup(self, x: np.ndarray) -> np.ndarray:
        keys = [row.tobytes() for row in x]
        if all(k in self._emb for k in keys):
            return np.stack([self._emb[k] for k in keys])
        return self.model.embed(x)

    def pair_scores(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a, b = np.asarray(a, np.float32), np.asarray(b, np.float32)
        # repeated query rows: embed once
        if len(a) > 1 and np.all(a == a[:1]):
            ea = np.repeat(self._lookup(a[:1]), len(a), axis=0)
        else:
            ea = self._lookup(a)
        return self.model.head_scores(ea, self._lookup(b))


def classify_table(
    test: DatasetTable, policy: ConsensusPolicy, model: SimilarityModel, train: DatasetTable,
) -> list[ClassificationOutcome]:
    """Classify every row of ``test``; results do not depend on row order."""
    policy.check(train)
    fixed = None
    if not policy.resample_per_query or policy.k == ALL:
        fixed = sample_exemplars(train, policy.k, policy.seed)
    return [classify(img, policy, model, train, exemplars=fixed) for img in test]


def outcome_record(outcome: ClassificationOutcome, query_id: str, true_label: int | None, k) -> dict:
    return {
        "query_id": query_id,
        "rule": outcome.rule,
        "k": k,
        "S_0": outcome.scores.get(0),
        "S_1": outcome.scores.get(1),
        "similarities": {str(c): [float(v) for v in s] for c, s in outcome.similarities.items()},
        "predicted": int(outcome.predicted),
        "true": None if true_label is None else int(true_label),
        "tie_broken": bool(outcome.tie_broken),
    }


OUTCOME_FIELDS = ("query_id", "rule", "k", "S_0", "S_1", "similarities", "predicted", "true", "tie_broken")


def write_outcome_log(
    path: str | os.PathLike, test: DatasetTable, outcomes: Sequence[ClassificationOutcome], k
) -> None:
    """JSON lines, one record per query."""
    with open(path, "w") as fh:
        for img, out in zip(test, outcomes):
            fh.write(json.dumps(outcome_record(out, img.id, img.task_label, k), sort_keys=True) + "\n")


def read_outcome_log(path: str | os.PathLike) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
