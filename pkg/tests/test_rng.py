import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenerylab import rng


@given(seed=st.integers(0, 2**64 - 1), replica=st.integers(0, 2**64 - 1), block=st.integers(1, 2**40))
@settings(max_examples=50, deadline=None)
def test_philox_block_matches_numpy(seed, replica, block):
    bg = np.random.Philox(key=rng.stream_key(seed, replica), counter=[block - 1, 0, 0, 0])
    expect = tuple(int(v) for v in bg.random_raw(4))
    assert rng.raw_block(seed, replica, (block, 0, 0, 0)) == expect


def test_generator_uses_tagged_counter_space():
    g = rng.generator(5, 2, rng.TILT_TAG)
    bg = np.random.Philox(key=rng.stream_key(5, 2), counter=[0, 0, 0, rng.TILT_TAG])
    assert np.array_equal(g.random(8), np.random.Generator(bg).random(8))


def test_streams_differ_by_replica():
    a = rng.generator(1, 0).random(4)
    b = rng.generator(1, 1).random(4)
    assert not np.array_equal(a, b)


def test_site_counter_packs_coordinates():
    c0, c1, c2 = rng.site_counter(np.array([1, -1, 7], dtype=np.int64))
    assert int(c0) == 1 | (0xFFFFFFFF << 32)
    assert int(c1) == 7 and int(c2) == 0


def test_unit_map_range():
    assert rng.u64_to_unit(np.uint64(0)) == 0.0
    assert rng.u64_to_unit(np.uint64(2**64 - 1)) < 1.0
