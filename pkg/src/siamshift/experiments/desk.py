"""Desk-scale Omniglot protocol: Katakana vs Korean under INST and SYMB splits.

One call per task trains both model families on each seed's split and
scores every consensus setting the comparisons need, so a single set of
models serves the k-robustness, vote-vs-average and regularisation
comparisons.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..consensus import ALL, AVERAGE, VOTE, ConsensusPolicy
from ..data.splits import INST, SYMB, SplitSpec, make_split
from ..data.table import DatasetTable
from ..models import EncoderConfig
from .evaluation import ConsensusPredictor, DirectPredictor, evaluate_accuracy
from .studies import grid_search_l2
from .training import TrainConfig, pretrain_then_finetune, train_direct, train_siamese

log = logging.getLogger(__name__)

# headline Siamese setting (average, one exemplar per class)
HEADLINE = "average_k1"

POLICIES = {
    "average_k1": ConsensusPolicy(AVERAGE, 1),
    "average_k10": ConsensusPolicy(AVERAGE, 10),
    "average_kall": ConsensusPolicy(AVERAGE, ALL),
    "vote_k10": ConsensusPolicy(VOTE, 10),
}


@dataclass(frozen=True)
class DeskBudget:
    """Step budgets sized for roughly 30 CPU minutes per seed and task.

    Siamese runs take 3000 pair batches of 16; the direct classifier takes
    50 passes over the 520 training images in batches of 32.
    """

    siamese: TrainConfig = TrainConfig(epochs=30, steps_per_epoch=100)
    direct: TrainConfig = TrainConfig(epochs=50)
    pretrain: TrainConfig = TrainConfig(epochs=30, steps_per_epoch=100)
    encoder: EncoderConfig = EncoderConfig()
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    fraction: float = 0.3
    lambdas: tuple[float, ...] = (0.0, 1e-5, 1e-4, 1e-3)
    policies: dict = field(default_factory=lambda: dict(POLICIES))


def _consensus_scores(model, train, test, policies, seed) -> dict[str, float]:
    return {
        name: evaluate_accuracy(ConsensusPredictor(model, train, replace(p, seed=seed)), test).accuracy
        for name, p in policies.items()
    }


def _split(table, kind, budget, seed):
    return make_split(table, SplitSpec(kind, budget.fraction, seed))


def task_study(
    table: DatasetTable, kind: str, budget: DeskBudget = DeskBudget(), l2_grid: bool = False
) -> list[dict]:
    """Per seed: split, train both families, score all policies.

    Rows hold ``direct``, ``siamese:<policy>`` and, with ``l2_grid``,
    ``direct_l2:<lambda>`` plus ``direct_l2:best`` (lambda tuned on the
    test split, the most favourable choice for the baseline).
    """
    rows = []
    for seed in budget.seeds:
        t0 = time.perf_counter()
        train, test = _split(table, kind, budget, seed)
        direct_cfg = replace(budget.direct, seed=seed)
        direct = train_direct(train, direct_cfg, budget.encoder).model
        row = {"seed": seed, "task": kind, "direct": evaluate_accuracy(DirectPredictor(direct), test).accuracy}
        siamese = train_siamese(train, replace(budget.siamese, seed=seed), budget.encoder).model
        for name, acc in _consensus_scores(siamese, train, test, budget.policies, seed).items():
            row[f"siamese:{name}"] = acc
        if l2_grid:

            def fit(tr, lam):
                if lam == direct_cfg.l2_lambda:
                    return DirectPredictor(direct)
                return DirectPredictor(train_direct(tr, replace(direct_cfg, l2_lambda=lam), budget.encoder).model)

            best, scores = grid_search_l2(train, test, budget.lambdas, direct_cfg, budget.encoder, fit=fit)
            row.update({f"direct_l2:{lam:g}": acc for lam, acc in scores.items()})
            row["direct_l2:best"] = scores[best]
            row["direct_l2:best_lambda"] = best
        row["seconds"] = time.perf_counter() - t0
        log.info("%s seed %d: %s", kind, seed, row)
        rows.append(row)
    return rows


def pretraining_study(
    pretrain: DatasetTable,
    table: DatasetTable,
    budget: DeskBudget = DeskBudget(),
    kind: str = SYMB,
    finetune_only: dict[int, float] | None = None,
) -> list[dict]:
    """Paired seeds: pretrain-only, finetune-only, and pretrain-then-finetune.

    The pretrain-only model classifies by consensus against the target
    training exemplars without ever seeing a target pair. Finetune-only
    accuracies already computed by :func:`task_study` under the same budget
    can be passed in as ``{seed: accuracy}`` to skip retraining.
    """
    policy = {HEADLINE: budget.policies[HEADLINE]}
    rows = []
    for seed in budget.seeds:
        train, test = _split(table, kind, budget, seed)
        target_cfg = replace(budget.siamese, seed=seed)
        pre_cfg = replace(budget.pretrain, seed=seed)
        both = pretrain_then_finetune(pretrain, train, target_cfg, pre_cfg, budget.encoder)
        models = {"pretrain_only": train_siamese(pretrain, pre_cfg, budget.encoder).model, "pretrain_finetune": both.model}
        row = {"seed": seed, "task": kind}
        if finetune_only is not None and seed in finetune_only:
            row["finetune_only"] = finetune_only[seed]
        else:
            models["finetune_only"] = train_siamese(train, target_cfg, budget.encoder).model
        for name, model in models.items():
            row[name] = _consensus_scores(model, train, test, policy, seed)[HEADLINE]
        rows.append(row)
    return rows


def column_mean(rows: Sequence[dict], key: str) -> float:
    return float(np.mean([r[key] for r in rows]))


def mean_abs_gap(rows: Sequence[dict], a: str, b: str) -> float:
    """Seed average of the per-seed absolute gap between ``a`` and ``b``.

    Never smaller than the gap between the two seed means.
    """
    return float(np.mean([abs(r[a] - r[b]) for r in rows]))

