"""Parameter checkpoints: a flat ``.npz`` archive of little-endian float32 arrays."""

from __future__ import annotations

import os
import zipfile
from typing import Mapping

import numpy as np

from ..errors import FormatError

FORMAT_VERSION = 1
_VERSION_KEY = "__format_version__"


def save_parameters(path: str | os.PathLike, arrays: Mapping[str, np.ndarray]) -> None:
    """Write ``name -> array``; names keep their dotted form as archive keys."""
    if _VERSION_KEY in arrays:
        raise FormatError(f"parameter name {_VERSION_KEY!r} is reserved")
    payload = {name: np.ascontiguousarray(a, dtype="<f4") for name, a in arrays.items()}
    payload[_VERSION_KEY] = np.array([FORMAT_VERSION], dtype="<i4")
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_parameters(path: str | os.PathLike) -> dict[str, np.ndarray]:
    try:
        archive = np.load(path, allow_pickle=False)
    except (zipfile.BadZipFile, ValueError, OSError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise FormatError(f"{path}: not a parameter archive") from exc
    with archive:
        if _VERSION_KEY not in archive.files:
            raise FormatError(f"{path}: missing format version header")
        version = int(archive[_VERSION_KEY][0])
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
        out = {}
        for name in archive.files:
            if name == _VERSION_KEY:
                continue
            arr = archive[name]
            if arr.dtype != np.dtype("<f4"):
                raise FormatError(f"{path}: {name} has dtype {arr.dtype}, expected <f4")
            out[name] = arr.astype(np.float32)
        return out
