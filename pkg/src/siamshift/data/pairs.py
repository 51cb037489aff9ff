"""Balanced same/different pair sampling for similarity training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError
from .table import DatasetTable, LabeledImage


@dataclass(frozen=True)
class PairSample:
    a: LabeledImage
    b: LabeledImage
    same: int

    def __post_init__(self):
        if self.a.id == self.b.id:
            raise DomainError(f"pair of image {self.a.id!r} with itself")
        if self.same != int(self.a.task_label == self.b.task_label):
            raise DomainError("same flag disagrees with the task labels")


class PairSampler:
    """Draws pairs with replacement; owns its RNG, so not thread-safe.

    Each pair is same-class with probability ``same_fraction``. With
    ``class_balanced`` the class (or pair of classes) is chosen uniformly
    rather than in proportion to class size.
    """

    def __init__(self, table: DatasetTable, same_fraction: float = 0.5, seed=0, class_balanced: bool = True):
        if not 0 <= same_fraction <= 1:
            raise DomainError(f"same_fraction must lie in [0, 1], got {same_fraction}")
        if len(table.classes) < 2 and same_fraction < 1:
            raise DomainError("different-class pairs need at least two classes")
        self.table = table
        self.same_fraction = same_fraction
        self.class_balanced = class_balanced
        self.rng = np.random.default_rng(seed)
        self._members = {c: np.array(v) for c, v in table.by_label.items()}
        self._classes = np.array(table.classes)
        self._same_classes = np.array([c for c, v in self._members.items() if len(v) >= 2])
        if same_fraction > 0 and not len(self._same_classes):
            raise DomainError("insufficient same-class pairs: no class has two images")
        sizes = np.array([len(self._members[c]) for c in self._classes], dtype=float)
        self._class_p = None if class_balanced else sizes / sizes.sum()
        same_sizes = np.array([len(self._members[c]) for c in self._same_classes], dtype=float)
        self._same_p = None if class_balanced or not len(same_sizes) else same_sizes / same_sizes.sum()

    def sample_indices(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row positions ``(ia, ib)`` and same flags for ``n`` pairs."""
        if n <= 0:
            raise DomainError(f"number of pairs must be positive, got {n}")
        rng = self.rng
        same = (rng.random(n) < self.same_fraction).astype(np.int64)
        ia = np.empty(n, dtype=np.int64)
        ib = np.empty(n, dtype=np.int64)
        for k in range(n):
            if same[k]:
                c = rng.choice(self._same_classes, p=self._same_p)
                i, j = rng.choice(self._members[c], size=2, replace=False)
            else:
                ca, cb = rng.choice(self._classes, size=2, replace=False, p=self._class_p)
                i = rng.choice(self._members[ca])
                j = rng.choice(self._members[cb])
            ia[k], ib[k] = i, j
        return ia, ib, same

    def sample(self, n: int) -> list[PairSample]:
        ia, ib, same = self.sample_indices(n)
        imgs = self.table.images
        return [PairSample(imgs[i], imgs[j], int(s)) for i, j, s in zip(ia, ib, same)]


def sample_pairs(
    table: DatasetTable, n: int, same_fraction: float = 0.5, seed=0, class_balanced: bool = True
) -> list[PairSample]:
    if n <= 0:
        raise DomainError(f"number of pairs must be positive, got {n}")
    return PairSampler(table, same_fraction, seed, class_balanced).sample(n)
