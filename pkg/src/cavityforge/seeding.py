"""Named random substreams derived from one 64-bit run seed.

A feature's stream is ``SeedSequence(seed, spawn_key=(image, feature, stage))``;
image-level draws use ``feature = IMAGE_LEVEL``. Any single image or feature
can therefore be regenerated without replaying the others.
"""
from __future__ import annotations

import numpy as np

IMAGE_LEVEL = 2**32 - 1

STAGE_PLAN = 0
STAGE_WARP = 1
STAGE_NOISE = 2
STAGE_SCENE = 3


def substream(seed: int, image: int, feature: int, stage: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(int(image), int(feature), int(stage)))


def generator(seed: int, image: int, feature: int, stage: int) -> np.random.Generator:
    return np.random.default_rng(substream(seed, image, feature, stage))


def derived_seed(seed: int, image: int, feature: int, stage: int) -> int:
    """A plain 64-bit integer seed for APIs that take ints."""
    return int(substream(seed, image, feature, stage).generate_state(1, np.uint64)[0])
