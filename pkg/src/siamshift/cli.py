"""Command-line entry point.

    siamshift synth      --config run.yaml --out out/
    siamshift ingest     PATH --out out/
    siamshift train      --config run.yaml --out out/
    siamshift eval       --config run.yaml --checkpoint out/model.npz --out out/ --k 1
    siamshift compare    --config run.yaml --out out/
    siamshift experiment --config run.yaml --out out/

Values come from built-in defaults, then the YAML config, then flags.
Relative dataset paths resolve against ``$SIAMSHIFT_DATA_ROOT`` when set.
Errors are printed to stderr as one JSON object; the exit code tells
the kind (see ``EXIT_CODES``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
import yaml
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import consensus as cons
from .data import DATA_ROOT_ENV, DatasetTable, SplitSpec, load_image_folder, make_split, synth_glyphs
from .data.splits import write_split_manifest
from .errors import ConfigError, DomainError, FormatError, SiamShiftError, TrainingError
from .experiments import (
    ConsensusPredictor,
    DirectPredictor,
    ExperimentReport,
    TrainConfig,
    agreement_analysis,
    direct_method,
    evaluate_accuracy,
    multi_split_experiment,
    regularised_direct_method,
    siamese_method,
    train_direct,
    train_siamese,
    write_loss_curve,
)
from .models import DirectClassifier, EncoderConfig, SiameseSimilarity, load_model, save_model

log = logging.getLogger("siamshift")

EXIT_CODES = {
    "ok": 0,
    "error": 1,
    "config": 2,
    "missing_file": 3,
    "divergence": 4,
    "data": 5,
    "format": 6,
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SynthSection(_Strict):
    n_classes: int = 2
    chars_per_class: int = 10
    instances_per_char: int = 20
    bias_strength: float = 0.0
    seed: int = 0
    class_offset: int = 0


class SplitSection(_Strict):
    kind: Literal["INST", "SYMB", "RANDOM_FRACTION"] = "INST"
    fraction: float = 0.3
    seed: int = 0

    @field_validator("kind", mode="before")
    @classmethod
    def _upper(cls, v):
        v = str(v).upper()
        return "RANDOM_FRACTION" if v == "RANDOM" else v


class DatasetSection(_Strict):
    path: Optional[str] = None
    synth: Optional[SynthSection] = None
    label_map: Optional[dict[str, int]] = None
    resize: int = 32
    invert: bool = False
    split: SplitSection = Field(default_factory=SplitSection)


class EncoderSection(_Strict):
    conv_blocks: list[tuple[int, int, bool]] = [(32, 3, True), (64, 3, True), (128, 3, True), (128, 3, True)]
    embedding_dim: int = 256


class ModelSection(_Strict):
    family: Literal["siamese", "direct"] = "siamese"
    merge: Literal["concat", "subtract"] = "concat"
    encoder: EncoderSection = Field(default_factory=EncoderSection)


class TrainSection(_Strict):
    epochs: int = 10
    steps_per_epoch: Optional[int] = None
    batch_size: Optional[int] = None
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2_lambda: float = 0.0
    seed: int = 0
    same_fraction: float = 0.5
    class_balanced: bool = True


class ConsensusSection(_Strict):
    rule: Literal["average", "vote"] = "average"
    k: Union[int, Literal["all"]] = 1
    resample_per_query: bool = True
    seed: int = 0
    vote_threshold: float = 0.5


class ExperimentSection(_Strict):
    n_splits: int = 2
    methods: list[Literal["siamese", "direct", "direct_l2"]] = ["siamese", "direct"]
    base_seed: int = 0
    lambdas: list[float] = [0.0, 1e-5, 1e-4, 1e-3]


class RunConfig(_Strict):
    dataset: DatasetSection = Field(default_factory=DatasetSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    consensus: ConsensusSection = Field(default_factory=ConsensusSection)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    output: str = "out"

    def echo(self) -> dict[str, Any]:
        """The config as reported and hashed; the output location is left out."""
        return self.model_dump(mode="json", exclude={"output"})


def load_config(path: str | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    data: dict[str, Any] = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file {p} not found")
        data = yaml.safe_load(p.read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
    for dotted, value in (overrides or {}).items():
        node = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(**cfg.train.model_dump())


def _encoder_config(cfg: RunConfig, input_shape) -> EncoderConfig:
    enc = cfg.model.encoder
    return EncoderConfig(tuple(tuple(b) for b in enc.conv_blocks), enc.embedding_dim, tuple(input_shape))


def _policy(cfg: RunConfig) -> cons.ConsensusPolicy:
    return cons.ConsensusPolicy(**cfg.consensus.model_dump())


def _resolve_path(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(DATA_ROOT_ENV)
    if not p.is_absolute() and root:
        p = Path(root) / p
    return p


def load_dataset(cfg: RunConfig) -> DatasetTable:
    ds = cfg.dataset
    if ds.synth is not None:
        return synth_glyphs(size=ds.resize, **ds.synth.model_dump())
    if ds.path is None:
        raise ConfigError("dataset needs either 'path' or 'synth'")
    return load_image_folder(_resolve_path(ds.path), ds.label_map, size=ds.resize, invert=ds.invert)


def _split(cfg: RunConfig, table: DatasetTable):
    spec = SplitSpec(cfg.dataset.split.kind, cfg.dataset.split.fraction, cfg.dataset.split.seed)
    train, test = make_split(table, spec)
    return spec, train, test


class _Outputs:
    """Collects written files into ``manifest.json`` under the output dir."""

    def __init__(self, out: Path, command: str, cfg: RunConfig | None):
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def finish(self, **extra) -> dict:
        from .experiments.reports import config_hash

        index_path = self.out / "manifest.json"
        index = json.loads(index_path.read_text()) if index_path.exists() else {"runs": {}}
        entry = {"files": sorted(set(self.files)), **extra}
        if self.cfg is not None:
            entry["config_hash"] = config_hash(self.cfg.echo())
            entry["config"] = self.cfg.echo()
        index["runs"][self.command] = entry
        index_path.write_text(json.dumps(index, indent=2, sort_keys=True))
        return entry


def _table_manifest(table: DatasetTable) -> dict:
    return {
        "n": len(table),
        "labels": {str(c): len(v) for c, v in table.by_label.items()},
        "content_hash": table.content_hash(),
        "images": [
            {"id": img.id, "label": img.task_label, "groups": dict(img.groups)} for img in table
        ],
        "meta": table.meta,
    }


def cmd_ingest(args) -> dict:
    label_map = json.loads(args.label_map) if args.label_map else None
    table = load_image_folder(_resolve_path(args.path), label_map, size=args.resize, invert=args.invert)
    outs = _Outputs(Path(args.out), "ingest", None)
    outs.path("dataset.json").write_text(json.dumps(_table_manifest(table), indent=1, sort_keys=True))
    return outs.finish(n=len(table), skipped=table.meta["ingest"]["skipped"])


def cmd_synth(args, cfg: RunConfig) -> dict:
    spec = cfg.dataset.synth or SynthSection()
    table = synth_glyphs(size=cfg.dataset.resize, **spec.model_dump())
    outs = _Outputs(Path(args.out), "synth", cfg)
    root = outs.out / "images"
    for img in table:
        f = root / f"{img.id}.png"
        f.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.round(img.pixels[0] * 255).astype(np.uint8), mode="L").save(f)
    outs.files.append("images/")
    outs.path("dataset.json").write_text(json.dumps(_table_manifest(table), indent=1, sort_keys=True))
    return outs.finish(n=len(table))


def _fit(cfg: RunConfig, train: DatasetTable, family: str):
    enc = _encoder_config(cfg, train[0].pixels.shape)
    tc = _train_config(cfg)
    if family == "siamese":
        return train_siamese(train, tc, enc, cfg.model.merge)
    return train_direct(train, tc, enc)


def cmd_train(args, cfg: RunConfig) -> dict:
    table = load_dataset(cfg)
    spec, train, test = _split(cfg, table)
    run = _fit(cfg, train, cfg.model.family)
    run.model.provenance = {"seed": cfg.train.seed, "dataset_hash": table.content_hash(), "split": spec.kind}
    outs = _Outputs(Path(args.out), "train", cfg)
    save_model(run.model, outs.path("model.npz"))
    outs.files.append("model.npz.json")
    write_loss_curve(outs.path("loss_curve.csv"), run.losses, cfg.echo(), run.stages)
    write_split_manifest(outs.path("split.json"), spec, train, test)
    return outs.finish(final_loss=run.losses[-1], steps=len(run.losses))


def _outcomes_for_direct(model: DirectClassifier, test: DatasetTable) -> list[cons.ClassificationOutcome]:
    probs = model.predict_proba(test.pixels()).astype(np.float64)
    return [
        cons.ClassificationOutcome({0: 1 - p, 1: p}, int(p > 0.5), {1: np.array([p])}, False, "direct")
        for p in probs
    ]


def cmd_eval(args, cfg: RunConfig) -> dict:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint {ckpt} not found")
    model = load_model(ckpt)
    table = load_dataset(cfg)
    _, train, test = _split(cfg, table)
    outs = _Outputs(Path(args.out), f"eval_k{cfg.consensus.k}_{cfg.consensus.rule}", cfg)
    if isinstance(model, SiameseSimilarity):
        policy = _policy(cfg)
        pred = ConsensusPredictor(model, train, policy)
        acc = evaluate_accuracy(pred, test)
        outcomes, k = pred.outcomes, policy.k
    else:
        acc = evaluate_accuracy(DirectPredictor(model), test)
        outcomes, k = _outcomes_for_direct(model, test), None
    name = f"outcomes_k{cfg.consensus.k}_{cfg.consensus.rule}.jsonl"
    cons.write_outcome_log(outs.path(name), test, outcomes, k)
    metrics = {"accuracy": acc.accuracy, "per_class_recall": {str(c): r for c, r in acc.per_class_recall.items()}}
    outs.path(name.replace("outcomes", "metrics").replace(".jsonl", ".json")).write_text(
        json.dumps(metrics, indent=2, sort_keys=True)
    )
    return outs.finish(**metrics)


def cmd_compare(args, cfg: RunConfig) -> dict:
    table = load_dataset(cfg)
    _, train, test = _split(cfg, table)
    siamese = _fit(cfg, train, "siamese").model
    direct = _fit(cfg, train, "direct").model
    a = ConsensusPredictor(siamese, train, _policy(cfg))
    b = DirectPredictor(direct)
    agreement = agreement_analysis(a, b, test)
    report = ExperimentReport(
        config=cfg.echo(),
        accuracy={"siamese": agreement.accuracy_a, "direct": agreement.accuracy_b},
    )
    report.add_agreement("siamese_vs_direct", agreement)
    outs = _Outputs(Path(args.out), "compare", cfg)
    report.write_json(outs.path("compare_report.json"))
    return outs.finish(**report.accuracy)


def cmd_experiment(args, cfg: RunConfig) -> dict:
    table = load_dataset(cfg)
    enc = _encoder_config(cfg, table[0].pixels.shape)
    tc = _train_config(cfg)
    methods = {}
    for m in cfg.experiment.methods:
        if m == "siamese":
            p = _policy(cfg)
            methods[m] = siamese_method(tc, {f"{p.rule}_k{p.k}": p}, enc, cfg.model.merge)
        elif m == "direct":
            methods[m] = direct_method(tc, enc)
        else:
            methods[m] = regularised_direct_method(tc, cfg.experiment.lambdas, enc)
    result = multi_split_experiment(
        table,
        cfg.dataset.split.kind,
        methods,
        n_splits=cfg.experiment.n_splits,
        base_seed=cfg.experiment.base_seed,
        fraction=cfg.dataset.split.fraction,
    )
    report = ExperimentReport.from_multi_split(cfg.echo(), result)
    outs = _Outputs(Path(args.out), "experiment", cfg)
    report.write_json(outs.path("experiment_report.json"))
    report.write_csv(outs.path("experiment_report.csv"))
    return outs.finish(summary=report.summary, failures=len(result.failures))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="siamshift", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_config=True):
        if with_config:
            p.add_argument("--config", help="YAML run configuration")
            p.add_argument("--seed", type=int, help="overrides train, split and consensus seeds")
            p.add_argument("--k", help="exemplars per class, integer or 'all'")
            p.add_argument("--rule", choices=["average", "vote"])
            p.add_argument("--merge", choices=["concat", "subtract"])
            p.add_argument("--task", choices=["inst", "symb", "random"])
        p.add_argument("--out", help="output directory (default: config 'output')")
        return p

    p = common(sub.add_parser("ingest", help="ingest an image folder into a dataset manifest"), with_config=False)
    p.add_argument("path")
    p.add_argument("--label-map", help='JSON object, e.g. \'{"open": 1, "closed": 0}\'')
    p.add_argument("--resize", type=int, default=32)
    p.add_argument("--invert", action="store_true")
    common(sub.add_parser("synth", help="write a synthetic glyph dataset"))
    common(sub.add_parser("train", help="train the configured model family"))
    p = common(sub.add_parser("eval", help="evaluate a checkpoint, writing an outcome log"))
    p.add_argument("--checkpoint", required=True)
    common(sub.add_parser("compare", help="train both families and report their agreement"))
    common(sub.add_parser("experiment", help="multi-split study"))
    return parser


def _overrides(args) -> dict[str, Any]:
    o: dict[str, Any] = {}
    if getattr(args, "seed", None) is not None:
        o.update({"train.seed": args.seed, "dataset.split.seed": args.seed,
                  "consensus.seed": args.seed, "experiment.base_seed": args.seed})
    if getattr(args, "k", None) is not None:
        o["consensus.k"] = args.k if args.k == "all" else int(args.k)
    if getattr(args, "rule", None):
        o["consensus.rule"] = args.rule
    if getattr(args, "merge", None):
        o["model.merge"] = args.merge
    if getattr(args, "task", None):
        o["dataset.split.kind"] = args.task
    if getattr(args, "out", None):
        o["output"] = args.out
    return o


def _fail(kind: str, exc: BaseException) -> int:
    code = EXIT_CODES[kind]
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}),
          file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "ingest":
            args.out = args.out or "out"
            result = cmd_ingest(args)
        else:
            cfg = load_config(args.config, _overrides(args))
            args.out = cfg.output
            handler = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
                       "compare": cmd_compare, "experiment": cmd_experiment}[args.command]
            result = handler(args, cfg)
    except ConfigError as exc:
        return _fail("config", exc)
    except FileNotFoundError as exc:
        return _fail("missing_file", exc)
    except TrainingError as exc:
        return _fail("divergence", exc)
    except FormatError as exc:
        return _fail("format", exc)
    except (DomainError, SiamShiftError) as exc:
        return _fail("data", exc)
    print(json.dumps({"command": args.command, "status": "ok", **{k: v for k, v in result.items() if k != "config"}},
                     sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
