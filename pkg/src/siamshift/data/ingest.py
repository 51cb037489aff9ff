"""Image-folder ingestion.

Layout: ``root/<class>/[<group dir>/...]<image>``. The class directory
name becomes the ``alphabet`` group; the first nested directory becomes
``character`` (qualified by the class name so it is unique). Omniglot
file stems ``<char>_<writer>`` give the ``writer`` group.
"""

from __future__ import annotations

import logging
import os
import re
import warnings
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import DomainError
from .table import DatasetTable, LabeledImage

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".pgm", ".ppm"}
DATA_ROOT_ENV = "SIAMSHIFT_DATA_ROOT"

OMNIGLOT_TASK_ALPHABETS = ("Japanese_(katakana)", "Korean")
_WRITER_RE = re.compile(r"_(\d+)$")


def _is_binary(img: Image.Image) -> bool:
    if img.mode == "1":
        return True
    arr = np.asarray(img.convert("L"))
    return bool(np.all((arr == 0) | (arr == 255)))


def decode_image(
    path: str | os.PathLike, size: int = 32, channels: int = 1, invert: bool = False
) -> np.ndarray:
    """Decode to ``[channels, size, size]`` float32 in [0, 1].

    Binary images are resized nearest-neighbour, everything else bilinear.
    """
    with Image.open(path) as img:
        img.load()
        binary = _is_binary(img)
        img = img.convert("L" if channels == 1 else "RGB")
        if img.size != (size, size):
            img = img.resize((size, size), Image.NEAREST if binary else Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
    if invert:
        arr = 1.0 - arr
    arr = arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
    return np.clip(arr, 0.0, 1.0)


def load_image_folder(
    root: str | os.PathLike,
    label_map: Mapping[str, int] | None = None,
    size: int = 32,
    channels: int = 1,
    invert: bool = False,
) -> DatasetTable:
    """Ingest ``root`` into a :class:`DatasetTable`.

    ``label_map`` maps class-directory names to labels; directories not in
    it are ignored. Without it, the (sorted) class directories are labelled
    0, 1, ... . Unreadable files are skipped with a warning and counted in
    ``table.meta["ingest"]["skipped"]``.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if label_map is None:
        if not class_dirs:
            raise DomainError(f"no classes found under {root}")
        label_map = {p.name: i for i, p in enumerate(class_dirs)}
    else:
        missing = sorted(set(label_map) - {p.name for p in class_dirs})
        if missing:
            raise DomainError(f"class directories {missing} not found under {root}")
        class_dirs = [p for p in class_dirs if p.name in label_map]
    if not class_dirs:
        raise DomainError(f"no classes found under {root}")

    images: list[LabeledImage] = []
    skipped: list[str] = []
    for cdir in class_dirs:
        files = sorted(p for p in cdir.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        n_before = len(images)
        for f in files:
            rel = f.relative_to(cdir)
            try:
                pixels = decode_image(f, size=size, channels=channels, invert=invert)
            except (UnidentifiedImageError, OSError, ValueError) as exc:
                skipped.append(str(f))
                warnings.warn(f"skipping unreadable image {f}: {exc}", stacklevel=2)
                continue
            groups = {"alphabet": cdir.name}
            if len(rel.parts) > 1:
                groups["character"] = f"{cdir.name}/{rel.parts[0]}"
                for depth, part in enumerate(rel.parts[1:-1], start=2):
                    groups[f"level{depth}"] = part
            m = _WRITER_RE.search(f.stem)
            groups["writer"] = m.group(1) if m else f.stem
            images.append(
                LabeledImage(
                    id=f"{cdir.name}/{rel.as_posix()}",
                    pixels=pixels,
                    task_label=int(label_map[cdir.name]),
                    groups=groups,
                )
            )
        if len(images) == n_before:
            raise DomainError(f"class directory {cdir} contains no readable images")
    if skipped:
        log.warning("skipped %d unreadable file(s) under %s", len(skipped), root)
    meta = {
        "source": str(root),
        "ingest": {"loaded": len(images), "skipped": len(skipped), "skipped_files": skipped},
        "label_map": dict(label_map),
        "size": size,
    }
    return DatasetTable(images, meta=meta)


def _alphabet_dirs(root: Path) -> dict[str, Path]:
    """Alphabet directories under an Omniglot root, whichever archive layout is used."""
    candidates = [root, root / "images_background", root / "images_evaluation",
                  root / "omniglot-py" / "images_background", root / "omniglot-py" / "images_evaluation"]
    found: dict[str, Path] = {}
    for base in candidates:
        if not base.is_dir():
            continue
        for p in sorted(base.iterdir()):
            if p.is_dir() and any(c.is_dir() for c in p.iterdir()) and p.name not in (
                "images_background", "images_evaluation", "omniglot-py"
            ):
                found.setdefault(p.name, p)
    return found


def resolve_data_root(root: str | os.PathLike | None = None) -> Path:
    root = root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise FileNotFoundError(f"no data root given and ${DATA_ROOT_ENV} is unset")
    return Path(root)


def omniglot_alphabets(root: str | os.PathLike | None = None) -> list[str]:
    return sorted(_alphabet_dirs(resolve_data_root(root)))


def _load_alphabets(root: Path, names: Sequence[str], labels: Sequence[int], size: int) -> DatasetTable:
    dirs = _alphabet_dirs(root)
    missing = [n for n in names if n not in dirs]
    if missing:
        raise FileNotFoundError(f"Omniglot alphabets {missing} not found under {root}")
    tables = []
    for name, label in zip(names, labels):
        parent = dirs[name].parent
        tables.append(load_image_folder(parent, {name: label}, size=size, invert=True))
    return DatasetTable([img for t in tables for img in t], meta={"source": str(root), "alphabets": list(names)})


def load_omniglot_task(
    root: str | os.PathLike | None = None,
    alphabets: Sequence[str] = OMNIGLOT_TASK_ALPHABETS,
    size: int = 32,
) -> DatasetTable:
    """Katakana (label 0) vs Korean (label 1), inverted to ink=1."""
    return _load_alphabets(resolve_data_root(root), list(alphabets), [0, 1], size)


def load_omniglot_pretrain(
    root: str | os.PathLike | None = None,
    exclude: Sequence[str] = OMNIGLOT_TASK_ALPHABETS,
    size: int = 32,
) -> DatasetTable:
    """All other alphabets, each its own class, for pair pre-training."""
    root = resolve_data_root(root)
    names = [n for n in sorted(_alphabet_dirs(root)) if n not in set(exclude)]
    if not names:
        raise FileNotFoundError(f"no pre-training alphabets found under {root}")
    return _load_alphabets(root, names, list(range(len(names))), size)
