import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

from siamshift.data import synth_glyphs  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def glyph_png(path, seed, size=12):
    rng = np.random.default_rng(seed)
    arr = np.full((size, size), 255, np.uint8)
    arr[rng.integers(0, size, 6), rng.integers(0, size, 6)] = 0
    Image.fromarray(arr).save(path)


@pytest.fixture(scope="session")
def omniglot_root(tmp_path_factory):
    """Omniglot directory layout with the public per-alphabet character counts."""
    root = tmp_path_factory.mktemp("omniglot")
    layout = {"images_background/Japanese_(katakana)": 47, "images_background/Korean": 40,
              "images_background/Greek": 3, "images_evaluation/Kannada": 2}
    code = 0
    for rel, n_chars in layout.items():
        for ch in range(1, n_chars + 1):
            d = root / rel / f"character{ch:02d}"
            d.mkdir(parents=True)
            code += 1
            for w in range(1, 21):
                glyph_png(d / f"{code:04d}_{w:02d}.png", code * 100 + w)
    return root


@pytest.fixture(scope="session")
def glyphs():
    """400 synthetic glyphs: 2 classes x 10 characters x 20 writers."""
    return synth_glyphs(chars_per_class=10, instances_per_char=20, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
