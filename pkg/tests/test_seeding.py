import numpy as np

from cavityforge import seeding


def test_streams_are_reproducible():
    a = seeding.generator(5, 1, 2, seeding.STAGE_WARP).random(4)
    b = seeding.generator(5, 1, 2, seeding.STAGE_WARP).random(4)
    np.testing.assert_array_equal(a, b)


def test_streams_are_distinct():
    keys = [(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0), (0, seeding.IMAGE_LEVEL, 0)]
    draws = {tuple(seeding.generator(5, *k).integers(0, 2**62, 2)) for k in keys}
    assert len(draws) == len(keys)
    assert seeding.derived_seed(5, 0, 0, 0) != seeding.derived_seed(6, 0, 0, 0)


def test_derived_seed_is_uint64():
    s = seeding.derived_seed(2**64 - 1, 3, 4, seeding.STAGE_NOISE)
    assert isinstance(s, int) and 0 <= s < 2**64
