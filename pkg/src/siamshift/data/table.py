"""Labelled images and the indexed table that holds them."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from ..errors import DimensionError, DomainError

GROUP_KEYS = ("alphabet", "character", "writer")


@dataclass(frozen=True, eq=False)
class LabeledImage:
    """One image, its task label, and grouping metadata.

    ``pixels`` is a read-only float32 ``[D, H, W]`` array in [0, 1]. Labels
    are 0/1 for a binary task; pre-training corpora may use more classes.
    """

    id: str
    pixels: np.ndarray
    task_label: int
    groups: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float32)
        if px.ndim != 3:
            raise DimensionError(f"{self.id}: pixels must be [D, H, W], got shape {px.shape}")
        if px.size and (px.min() < 0 or px.max() > 1 or not np.all(np.isfinite(px))):
            raise DomainError(f"{self.id}: pixel values must lie in [0, 1]")
        if int(self.task_label) != self.task_label or self.task_label < 0:
            raise DomainError(f"{self.id}: task_label must be a non-negative integer, got {self.task_label}")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "task_label", int(self.task_label))
        object.__setattr__(self, "groups", MappingProxyType(dict(self.groups)))


class DatasetTable:
    """Immutable ordered collection of :class:`LabeledImage` with indexes.

    ``by_label[c]`` and ``by_group[key][value]`` map to tuples of row
    positions. ``meta`` holds free-form provenance (e.g. ingestion reports).
    """

    def __init__(self, images: Iterable[LabeledImage], meta: Mapping | None = None):
        self.images: tuple[LabeledImage, ...] = tuple(images)
        self.meta = dict(meta or {})
        self._pos: dict[str, int] = {}
        by_label: dict[int, list[int]] = {}
        by_group: dict[str, dict[str, list[int]]] = {}
        for i, img in enumerate(self.images):
            if img.id in self._pos:
                raise DomainError(f"duplicate image id {img.id!r}")
            self._pos[img.id] = i
            by_label.setdefault(img.task_label, []).append(i)
            for key, value in img.groups.items():
                by_group.setdefault(key, {}).setdefault(value, []).append(i)
        self.by_label = {c: tuple(v) for c, v in sorted(by_label.items())}
        self.by_group = {k: {g: tuple(v) for g, v in d.items()} for k, d in by_group.items()}
        self._stack: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.images)

    def __iter__(self) -> Iterator[LabeledImage]:
        return iter(self.images)

    def __getitem__(self, i: int) -> LabeledImage:
        return self.images[i]

    def __repr__(self) -> str:
        counts = {c: len(v) for c, v in self.by_label.items()}
        return f"DatasetTable(n={len(self)}, labels={counts})"

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(self.by_label)

    @property
    def ids(self) -> list[str]:
        return [img.id for img in self.images]

    @property
    def labels(self) -> np.ndarray:
        return np.array([img.task_label for img in self.images], dtype=np.int64)

    def position(self, image_id: str) -> int:
        return self._pos[image_id]

    def get(self, image_id: str) -> LabeledImage:
        return self.images[self._pos[image_id]]

    def group_values(self, key: str) -> np.ndarray:
        return np.array([img.groups.get(key, "") for img in self.images], dtype=object)

    def pixels(self) -> np.ndarray:
        """All images stacked as ``[N, D, H, W]`` (cached)."""
        if self._stack is None:
            if not self.images:
                raise DomainError("empty table has no pixel stack")
            self._stack = np.stack([img.pixels for img in self.images])
            self._stack.setflags(write=False)
        return self._stack

    def subset(self, positions: Sequence[int]) -> "DatasetTable":
        return DatasetTable((self.images[i] for i in positions), meta=self.meta)

    def select_ids(self, ids: Iterable[str]) -> "DatasetTable":
        return self.subset([self._pos[i] for i in ids])

    def require_binary(self) -> None:
        if self.classes != (0, 1):
            raise DomainError(f"table must contain both task labels 0 and 1, has {self.classes}")

    def content_hash(self) -> str:
        """SHA-256 over ids, labels, and pixel bytes, stable across runs."""
        h = hashlib.sha256()
        for img in self.images:
            h.update(img.id.encode())
            h.update(bytes([img.task_label % 256]))
            h.update(np.ascontiguousarray(img.pixels).tobytes())
        return h.hexdigest()
