"""Dataset tables, ingestion, domain-shift splits, pair sampling, synthetic glyphs."""

from .ingest import (
    DATA_ROOT_ENV,
    OMNIGLOT_TASK_ALPHABETS,
    decode_image,
    load_image_folder,
    load_omniglot_pretrain,
    load_omniglot_task,
    omniglot_alphabets,
    resolve_data_root,
)
from .pairs import PairSample, PairSampler, sample_pairs
from .splits import (
    INST,
    RANDOM_FRACTION,
    SYMB,
    SplitSpec,
    make_split,
    read_split_manifest,
    split_inst,
    split_manifest,
    split_random_fraction,
    split_symb,
    write_split_manifest,
)
from .synth import synth_glyphs
from .table import DatasetTable, LabeledImage

__all__ = [
    "DATA_ROOT_ENV",
    "DatasetTable",
    "INST",
    "LabeledImage",
    "OMNIGLOT_TASK_ALPHABETS",
    "PairSample",
    "PairSampler",
    "RANDOM_FRACTION",
    "SYMB",
    "SplitSpec",
    "decode_image",
    "load_image_folder",
    "load_omniglot_pretrain",
    "load_omniglot_task",
    "make_split",
    "omniglot_alphabets",
    "read_split_manifest",
    "resolve_data_root",
    "sample_pairs",
    "split_inst",
    "split_manifest",
    "split_random_fraction",
    "split_symb",
    "synth_glyphs",
    "write_split_manifest",
]
