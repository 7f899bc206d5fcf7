import numpy as np
import pytest

from flashopt.rng import child_rng, make_rng


def test_same_seed_same_stream():
    a = make_rng(7).random(5)
    b = make_rng(7).random(5)
    assert np.array_equal(a, b)


def test_streams_are_distinct():
    assert not np.array_equal(make_rng(7, 0).random(5), make_rng(7, 1).random(5))
    assert not np.array_equal(make_rng(7).random(5), make_rng(8).random(5))


def test_generator_is_philox():
    assert isinstance(make_rng(0).bit_generator, np.random.Philox)


def test_key_layout():
    # key = seed + (stream << 64) as a 128-bit pair of 64-bit words
    key = make_rng(5, 3).bit_generator.state["state"]["key"]
    assert list(key) == [5, 3]


def test_child_rng_is_deterministic():
    a = child_rng(make_rng(3)).random(3)
    b = child_rng(make_rng(3)).random(3)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("seed,stream", [(-1, 0), (0, -1), (2**64, 0)])
def test_out_of_range(seed, stream):
    with pytest.raises(ValueError):
        make_rng(seed, stream)
