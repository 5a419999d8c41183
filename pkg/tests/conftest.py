"""Shared fixtures: a small profile LUT, synthetic backgrounds, and the
acceptance summary printed at the end of the run."""
from __future__ import annotations

import json

import numpy as np
import pytest
from scipy import ndimage

from cavityforge.compositor import BackgroundImage
from cavityforge.dataset_io import write_image
from cavityforge.lut import build_lut

SMALL_RADII = (2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0)
SMALL_DEFOCUS = (-0.3, -0.8, -1.3)

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance():
    def record(number: int, ok: bool, title: str, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] AC{number:02d} {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


@pytest.fixture(scope="session")
def small_lut():
    return build_lut(SMALL_RADII, SMALL_DEFOCUS)


def synthetic_background(size: int = 256, seed: int = 0, level: float = 30000.0,
                         dtype=np.uint16) -> np.ndarray:
    """Smooth grain plus pixel noise around ``level``; a stand-in for a clean micrograph."""
    rng = np.random.default_rng(seed)
    grain = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (size, size)), 6)
    grain /= grain.std()
    top = np.iinfo(dtype).max
    img = level + 0.06 * level * grain + rng.normal(0.0, 0.01 * level, (size, size))
    return np.clip(np.rint(img), 0, top).astype(dtype)


@pytest.fixture
def background():
    def make(size=256, scale=0.1, seed=0, level=30000.0, dtype=np.uint16):
        return BackgroundImage(synthetic_background(size, seed, level, dtype), scale, f"bg{seed}")

    return make


@pytest.fixture
def background_dir(tmp_path):
    """Directory with two 2048 px backgrounds and their pixel scales."""
    def make(n=2, size=2048, scale=0.11):
        d = tmp_path / "backgrounds"
        d.mkdir(exist_ok=True)
        scales = {}
        for i in range(n):
            write_image(d / f"bg{i}.png", synthetic_background(size, seed=100 + i))
            scales[f"bg{i}"] = scale
        (d / "scales.json").write_text(json.dumps(scales))
        return d

    return make
