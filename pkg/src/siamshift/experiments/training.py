"""Training loops for both model families and the two-stage protocol."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from ..backbone import ops
from ..backbone.optim import Adam
from ..backbone.tensor import Tape, Tensor, backward
from ..data.pairs import PairSampler
from ..data.table import DatasetTable
from ..errors import ContractError, DomainError, NumericalError, TrainingError
from ..models import CONCAT, DirectClassifier, EncoderConfig, SiameseSimilarity

log = logging.getLogger(__name__)

SIAMESE_BATCH = 16
DIRECT_BATCH = 32


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings.

    ``batch_size=None`` picks 16 pairs for Siamese training and 32 images
    for the direct classifier. ``steps_per_epoch=None`` means one pass over
    the images for direct training and 100 pair batches for Siamese
    training. The total budget is ``epochs * steps_per_epoch``; there is no
    early stopping.
    """

    epochs: int = 10
    steps_per_epoch: int | None = None
    batch_size: int | None = None
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2_lambda: float = 0.0
    seed: int = 0
    same_fraction: float = 0.5
    class_balanced: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise DomainError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise DomainError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise DomainError(f"steps_per_epoch must be >= 1, got {self.steps_per_epoch}")
        if self.l2_lambda < 0:
            raise DomainError(f"l2_lambda must be non-negative, got {self.l2_lambda}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class TrainRun:
    """A trained model with its per-step loss curve.

    ``stages`` lists ``(name, first_step, end_step)`` ranges into ``losses``.
    """

    model: DirectClassifier | SiameseSimilarity
    losses: list[float] = field(default_factory=list)
    stages: list[tuple[str, int, int]] = field(default_factory=list)

    def stage_losses(self, name: str) -> list[float]:
        for n, a, b in self.stages:
            if n == name:
                return self.losses[a:b]
        raise KeyError(name)


def _optimizer(model, config: TrainConfig) -> Adam:
    return Adam(model.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2, epsilon=config.epsilon)


def _step(model, opt: Adam, config: TrainConfig, forward, target: np.ndarray, step: int) -> float:
    try:
        with Tape() as tape, np.errstate(over="ignore", invalid="ignore"):
            loss = ops.bce_loss(forward(), target)
            if config.l2_lambda > 0:
                loss = ops.add(loss, ops.l2_penalty(model.parameters(), config.l2_lambda))
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError("loss is not finite")
        backward(loss, tape)
        opt.step()
    except NumericalError as exc:
        raise TrainingError(f"training diverged: {exc}", step) from exc
    return value


def _batches(rng: np.random.Generator, n: int, batch_size: int):
    """Endless stream of shuffled minibatches, reshuffling each pass."""
    while True:
        perm = rng.permutation(n)
        for i in range(0, n, batch_size):
            yield perm[i:i + batch_size]


def train_direct(
    train: DatasetTable,
    config: TrainConfig = TrainConfig(),
    encoder: EncoderConfig | None = None,
    model: DirectClassifier | None = None,
) -> TrainRun:
    """Fit the single-image classifier with BCE (+ optional L2) by ADAM."""
    train.require_binary()
    if model is None:
        model = DirectClassifier(encoder or EncoderConfig(input_shape=train[0].pixels.shape), seed=config.seed)
    bs = config.batch_size or DIRECT_BATCH
    steps = config.epochs * (config.steps_per_epoch or int(np.ceil(len(train) / bs)))
    px, labels = train.pixels(), train.labels.astype(np.float32)
    rng = np.random.default_rng([config.seed, 2])
    opt = _optimizer(model, config)
    run = TrainRun(model)
    batches = _batches(rng, len(train), bs)
    for step in range(steps):
        idx = next(batches)
        run.losses.append(_step(model, opt, config, lambda: model.forward(Tensor(px[idx])), labels[idx], step))
    run.stages.append(("train", 0, steps))
    return run


def _siamese_steps(config: TrainConfig) -> int:
    return config.epochs * (config.steps_per_epoch or 100)


def _fit_pairs(model: SiameseSimilarity, table: DatasetTable, config: TrainConfig, run: TrainRun, stage: str) -> None:
    bs = config.batch_size or SIAMESE_BATCH
    sampler = PairSampler(table, config.same_fraction, seed=[config.seed, 3], class_balanced=config.class_balanced)
    px = table.pixels()
    opt = _optimizer(model, config)
    start = len(run.losses)
    steps = _siamese_steps(config)
    for step in range(steps):
        ia, ib, same = sampler.sample_indices(bs)
        value = _step(
            model, opt, config, lambda: model.forward(Tensor(px[ia]), Tensor(px[ib])), same.astype(np.float32),
            start + step,
        )
        run.losses.append(value)
    run.stages.append((stage, start, start + steps))
    log.debug("%s: %d steps, final loss %.4f", stage, steps, run.losses[-1])


def train_siamese(
    train: DatasetTable,
    config: TrainConfig = TrainConfig(),
    encoder: EncoderConfig | None = None,
    merge: str = CONCAT,
    model: SiameseSimilarity | None = None,
) -> TrainRun:
    """Fit the pair-similarity network on balanced same/different pairs."""
    if len(train.classes) < 2:
        raise DomainError("pair training needs at least two classes")
    if model is None:
        model = SiameseSimilarity(
            encoder or EncoderConfig(input_shape=train[0].pixels.shape), seed=config.seed, merge=merge
        )
    run = TrainRun(model)
    _fit_pairs(model, train, config, run, "train")
    return run


def check_disjoint(pretrain: DatasetTable, target: DatasetTable) -> None:
    """Pre-training data must share neither images nor classes with the target."""
    shared = set(pretrain.ids) & set(target.ids)
    if shared:
        raise ContractError(f"pre-training and target share {len(shared)} image id(s)")
    pa = set(pretrain.by_group.get("alphabet", {}))
    ta = set(target.by_group.get("alphabet", {}))
    if pa & ta:
        raise ContractError(f"pre-training and target share classes {sorted(pa & ta)}")


def pretrain_then_finetune(
    pretrain: DatasetTable,
    target: DatasetTable,
    config: TrainConfig = TrainConfig(),
    pretrain_config: TrainConfig | None = None,
    encoder: EncoderConfig | None = None,
    merge: str = CONCAT,
) -> TrainRun:
    """Stage 1 trains pair similarity on ``pretrain``; stage 2 fine-tunes every
    parameter on ``target`` pairs with a fresh optimiser."""
    check_disjoint(pretrain, target)
    pretrain_config = pretrain_config or config
    model = SiameseSimilarity(
        encoder or EncoderConfig(input_shape=target[0].pixels.shape), seed=config.seed, merge=merge
    )
    run = TrainRun(model)
    _fit_pairs(model, pretrain, pretrain_config, run, "pretrain")
    _fit_pairs(model, target, config, run, "finetune")
    return run


def weight_norm(model) -> float:
    return float(np.sqrt(sum(np.sum(p.data.astype(np.float64) ** 2) for p in model.parameters() if p.role == "weight")))
