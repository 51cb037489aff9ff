"""Procedural stroke glyphs with a controllable spurious feature.

Every glyph is a "door frame": two vertical posts plus a few
character-specific strokes between them. The class is encoded in bars
joining the posts (bit 0 of the class index: a bar across the bottom ends,
bit 1: across the top, bit 2: a diagonal). Instances of one character are
"written" by different writers, i.e. jittered endpoints, thickness and
position.

A grey corner patch acts as the nuisance. Characters alternate between
two locations. In location ``A`` the patch appears with probability
``(1 + bias) / 2`` for odd class indices and ``(1 - bias) / 2`` otherwise;
in location ``B`` it appears half the time regardless of class. At
``bias_strength=1`` the patch is a perfect class cue in ``A`` and useless
in ``B``.
"""

from __future__ import annotations

import numpy as np

from ..errors import DomainError
from .table import DatasetTable, LabeledImage

PATCH_VALUE = 0.35
PATCH_FRAC = 0.2


def _draw_segments(size: int, segments: np.ndarray, thickness: float) -> np.ndarray:
    """Rasterise ``[S, 2, 2]`` segments given in unit coordinates (x, y)."""
    yy, xx = np.mgrid[0:size, 0:size]
    pts = np.stack([(xx + 0.5) / size, (yy + 0.5) / size], axis=-1)[None]  # [1, H, W, 2]
    p0 = segments[:, 0][:, None, None]
    p1 = segments[:, 1][:, None, None]
    d = p1 - p0
    t = np.clip(((pts - p0) * d).sum(-1) / np.maximum((d * d).sum(-1), 1e-12), 0, 1)
    dist = np.linalg.norm(pts - (p0 + t[..., None] * d), axis=-1) * size
    return (dist.min(axis=0) <= thickness / 2).astype(np.float32)


def _prototype(rng: np.random.Generator, class_index: int) -> np.ndarray:
    left, right = 0.28 + rng.uniform(-0.04, 0.04), 0.72 + rng.uniform(-0.04, 0.04)
    top, bottom = 0.18 + rng.uniform(-0.03, 0.03), 0.82 + rng.uniform(-0.03, 0.03)
    segs = [((left, top), (left, bottom)), ((right, top), (right, bottom))]
    if class_index & 1:
        segs.append(((left, bottom), (right, bottom)))
    if class_index & 2:
        segs.append(((left, top), (right, top)))
    if class_index & 4:
        segs.append(((left, top), (right, bottom)))
    for _ in range(rng.integers(1, 4)):
        x0, x1 = rng.uniform(left + 0.06, right - 0.06, size=2)
        y0, y1 = rng.uniform(0.32, 0.66, size=2)
        segs.append(((x0, y0), (x1, y1)))
    return np.array(segs, dtype=float)


def _render(proto: np.ndarray, rng: np.random.Generator, size: int, patch: bool) -> np.ndarray:
    segs = proto + rng.normal(0, 0.02, size=proto.shape)
    segs = segs + rng.uniform(-0.05, 0.05, size=2)
    thickness = rng.uniform(1.2, 2.2) * size / 32
    img = _draw_segments(size, segs, thickness)
    if patch:
        p = max(1, int(round(PATCH_FRAC * size)))
        img[:p, :p] = np.maximum(img[:p, :p], PATCH_VALUE)
    return img


def synth_glyphs(
    n_classes: int = 2,
    chars_per_class: int = 10,
    instances_per_char: int = 20,
    bias_strength: float = 0.0,
    seed: int = 0,
    size: int = 32,
    class_offset: int = 0,
) -> DatasetTable:
    """Build a glyph table with groups ``alphabet``, ``character``, ``writer``,
    ``location`` and ``nuisance`` (``"1"`` when the patch is drawn).

    ``class_offset`` shifts the geometric class code, so a pre-training
    corpus can use glyph classes disjoint from the target task's.
    """
    if not 0 <= bias_strength <= 1:
        raise DomainError(f"bias_strength must lie in [0, 1], got {bias_strength}")
    if n_classes < 1 or chars_per_class < 1 or instances_per_char < 1:
        raise DomainError("n_classes, chars_per_class and instances_per_char must be positive")
    if class_offset < 0 or n_classes + class_offset > 8:
        raise DomainError("class codes must fit in 3 bits (n_classes + class_offset <= 8)")
    images = []
    for c in range(n_classes):
        code = c + class_offset
        alphabet = f"glyph{code}"
        for j in range(chars_per_class):
            proto = _prototype(np.random.default_rng([seed, code, j]), code)
            location = "A" if j % 2 == 0 else "B"
            for i in range(instances_per_char):
                rng = np.random.default_rng([seed, code, j, i, 1])
                if location == "A":
                    p_patch = (1 + bias_strength) / 2 if code % 2 else (1 - bias_strength) / 2
                else:
                    p_patch = 0.5
                patch = bool(rng.random() < p_patch)
                pixels = _render(proto, rng, size, patch)[None]
                images.append(
                    LabeledImage(
                        id=f"{alphabet}/char{j:02d}/w{i:02d}",
                        pixels=pixels,
                        task_label=c,
                        groups={
                            "alphabet": alphabet,
                            "character": f"{alphabet}/char{j:02d}",
                            "writer": f"w{i:02d}",
                            "location": location,
                            "nuisance": "1" if patch else "0",
                        },
                    )
                )
    meta = {
        "source": "synth_glyphs",
        "params": dict(
            n_classes=n_classes,
            chars_per_class=chars_per_class,
            instances_per_char=instances_per_char,
            bias_strength=bias_strength,
            seed=seed,
            size=size,
            class_offset=class_offset,
        ),
    }
    return DatasetTable(images, meta=meta)
