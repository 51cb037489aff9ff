"""JSON/CSV report writers. Every file carries the hash of its config."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Sequence

from .evaluation import Agreement
from .studies import MultiSplitResult


def config_hash(config: Any) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ExperimentReport:
    config: dict[str, Any]
    accuracy: dict[str, float] = field(default_factory=dict)
    per_split: list[dict] = field(default_factory=list)
    agreement: dict[str, dict[str, float]] = field(default_factory=dict)
    summary: dict[str, dict[str, float]] = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    @classmethod
    def from_multi_split(cls, config: dict[str, Any], result: MultiSplitResult) -> "ExperimentReport":
        summary = result.summary()
        return cls(
            config=config,
            accuracy={m: s["mean"] for m, s in summary.items()},
            per_split=list(result.rows),
            summary=summary,
            failures=list(result.failures),
            wall_clock=result.wall_clock,
        )

    def add_agreement(self, name: str, agreement: Agreement) -> None:
        self.agreement[name] = agreement.to_dict()

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "config": self.config,
            "accuracy": self.accuracy,
            "summary": self.summary,
            "per_split": self.per_split,
            "agreement": self.agreement,
            "failures": self.failures,
            "wall_clock": self.wall_clock,
        }

    def write_json(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def write_csv(self, path: str | os.PathLike) -> None:
        """One row per split x method."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["config_hash", "split", "seed", "method", "accuracy"])
            for r in self.per_split:
                w.writerow([self.config_hash, r["split"], r["seed"], r["method"], repr(float(r["accuracy"]))])


def write_loss_curve(path: str | os.PathLike, losses: Sequence[float], config: Any, stages=()) -> None:
    h = config_hash(config)
    stage_of = {}
    for name, a, b in stages:
        for i in range(a, b):
            stage_of[i] = name
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config_hash", "step", "stage", "loss"])
        for i, loss in enumerate(losses):
            w.writerow([h, i, stage_of.get(i, ""), repr(float(loss))])
