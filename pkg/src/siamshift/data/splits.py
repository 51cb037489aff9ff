"""Train/test splits that induce domain shift.

``INST`` splits individual images, so every character is seen in
training but only through some writers. ``SYMB`` splits whole characters,
so test characters are never seen. ``RANDOM_FRACTION`` is a plain
class-stratified instance split.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..errors import DomainError, FormatError
from .table import DatasetTable

INST = "INST"
SYMB = "SYMB"
RANDOM_FRACTION = "RANDOM_FRACTION"
SPLIT_KINDS = (INST, SYMB, RANDOM_FRACTION)


@dataclass(frozen=True)
class SplitSpec:
    kind: str = INST
    fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        kind = self.kind.upper()
        if kind == "RANDOM":
            kind = RANDOM_FRACTION
        if kind not in SPLIT_KINDS:
            raise DomainError(f"split kind must be one of {SPLIT_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        _check_fraction(self.fraction)


def _check_fraction(fraction: float) -> None:
    if not 0 < fraction < 1:
        raise DomainError(f"fraction must lie strictly between 0 and 1, got {fraction}")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _finish(table: DatasetTable, train_pos: list[int]) -> tuple[DatasetTable, DatasetTable]:
    chosen = set(train_pos)
    train = sorted(chosen)
    test = [i for i in range(len(table)) if i not in chosen]
    if not train or not test:
        raise DomainError("split leaves one side empty")
    train_t, test_t = table.subset(train), table.subset(test)
    for side, name in ((train_t, "train"), (test_t, "test")):
        if side.classes != table.classes:
            raise DomainError(f"split leaves the {name} side without every class (has {side.classes})")
    return train_t, test_t


def _characters_of(table: DatasetTable, positions: tuple[int, ...]) -> list[str]:
    chars = table.by_group.get("character")
    if chars is None:
        raise DomainError("table has no 'character' group labels")
    found = {table.images[i].groups.get("character") for i in positions}
    if None in found:
        raise DomainError("some images lack a 'character' group label")
    return sorted(found)


def split_inst(table: DatasetTable, fraction: float = 0.3, seed: int = 0) -> tuple[DatasetTable, DatasetTable]:
    """Instance-level split, stratified per class.

    Each class gets the same training budget a character-level split of the
    same fraction would give it (``round(fraction * n_characters)``
    characters' worth of images), drawn uniformly over that class's images.
    Tables without character labels fall back to ``round(fraction * n)``.
    """
    _check_fraction(fraction)
    rng = np.random.default_rng(seed)
    has_chars = "character" in table.by_group
    train: list[int] = []
    for c, positions in table.by_label.items():
        n = len(positions)
        if has_chars:
            n_chars = len(_characters_of(table, positions))
            n_train = _round_half_up(_round_half_up(fraction * n_chars) * n / n_chars)
        else:
            n_train = _round_half_up(fraction * n)
        if not 0 < n_train < n:
            raise DomainError(f"class {c}: fraction {fraction} leaves an empty side ({n_train} of {n})")
        train.extend(rng.choice(np.array(positions), size=n_train, replace=False).tolist())
    return _finish(table, train)


def split_symb(table: DatasetTable, fraction: float = 0.3, seed: int = 0) -> tuple[DatasetTable, DatasetTable]:
    """Character-level split: every character lands wholly on one side."""
    _check_fraction(fraction)
    rng = np.random.default_rng(seed)
    by_char = table.by_group.get("character")
    if by_char is None:
        raise DomainError("table has no 'character' group labels")
    train: list[int] = []
    for c, positions in table.by_label.items():
        chars = _characters_of(table, positions)
        n_train = _round_half_up(fraction * len(chars))
        if not 0 < n_train < len(chars):
            raise DomainError(
                f"class {c}: cannot split {len(chars)} character(s) at fraction {fraction}"
            )
        for ch in rng.choice(np.array(chars, dtype=object), size=n_train, replace=False):
            members = by_char[ch]
            if any(table.images[i].task_label != c for i in members):
                raise DomainError(f"character {ch!r} spans several classes")
            train.extend(members)
    return _finish(table, train)


def split_random_fraction(
    table: DatasetTable, fraction: float = 0.3, seed: int = 0
) -> tuple[DatasetTable, DatasetTable]:
    """Stratified instance split with exactly ``round(fraction * n)`` training images.

    The total is apportioned to classes by largest remainder, so each
    class's share is within one image of ``fraction * n_c``.
    """
    _check_fraction(fraction)
    rng = np.random.default_rng(seed)
    classes = list(table.by_label)
    sizes = np.array([len(table.by_label[c]) for c in classes])
    total = _round_half_up(fraction * len(table))
    quota = sizes * total / len(table)
    alloc = np.floor(quota).astype(int)
    order = np.argsort(-(quota - alloc), kind="stable")
    for i in order[: total - alloc.sum()]:
        alloc[i] += 1
    train: list[int] = []
    for c, n_c, n_train in zip(classes, sizes, alloc):
        if not 0 < n_train < n_c:
            raise DomainError(f"class {c}: fraction {fraction} leaves an empty side ({n_train} of {n_c})")
        train.extend(rng.choice(np.array(table.by_label[c]), size=int(n_train), replace=False).tolist())
    return _finish(table, train)


_SPLITTERS = {INST: split_inst, SYMB: split_symb, RANDOM_FRACTION: split_random_fraction}


def make_split(table: DatasetTable, spec: SplitSpec) -> tuple[DatasetTable, DatasetTable]:
    return _SPLITTERS[spec.kind](table, spec.fraction, spec.seed)


def split_manifest(spec: SplitSpec, train: DatasetTable, test: DatasetTable) -> dict[str, Any]:
    return {
        "kind": spec.kind,
        "fraction": spec.fraction,
        "seed": spec.seed,
        "train_ids": train.ids,
        "test_ids": test.ids,
    }


def write_split_manifest(path: str | os.PathLike, spec: SplitSpec, train: DatasetTable, test: DatasetTable) -> None:
    with open(path, "w") as fh:
        json.dump(split_manifest(spec, train, test), fh, indent=1)


def read_split_manifest(
    path: str | os.PathLike, table: DatasetTable
) -> tuple[SplitSpec, DatasetTable, DatasetTable]:
    with open(path) as fh:
        d = json.load(fh)
    missing = {"kind", "fraction", "seed", "train_ids", "test_ids"} - set(d)
    if missing:
        raise FormatError(f"{path}: split manifest lacks {sorted(missing)}")
    spec = SplitSpec(d["kind"], d["fraction"], d["seed"])
    try:
        return spec, table.select_ids(d["train_ids"]), table.select_ids(d["test_ids"])
    except KeyError as exc:
        raise FormatError(f"{path}: id {exc.args[0]!r} not in table") from exc
