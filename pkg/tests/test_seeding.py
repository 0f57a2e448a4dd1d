# tests/test_seeding.py

import numpy as np
import pytest

from byzsgd.seeding import PURPOSE_TAGS, replicate_seed, stream


def test_same_key_same_draws():
    a = stream(5, "worker", 2, 7).standard_normal(8)
    b = stream(5, "worker", 2, 7).standard_normal(8)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize(
    "other",
    [
        (6, "worker", 2, 7),
        (5, "master", 2, 7),
        (5, "worker", 3, 7),
        (5, "worker", 2, 8),
        (5, "worker", 2),
    ],
)
def test_changing_any_key_changes_stream(other):
    base = stream(5, "worker", 2, 7).standard_normal(8)
    assert not np.array_equal(base, stream(*other).standard_normal(8))


def test_purpose_tags_distinct():
    assert len(set(PURPOSE_TAGS.values())) == len(PURPOSE_TAGS)


def test_unknown_purpose():
    with pytest.raises(ValueError, match="purpose"):
        stream(0, "nope")


@pytest.mark.parametrize("args", [(-1, "data"), (0, "worker", -2)])
def test_negative_keys_rejected(args):
    with pytest.raises(ValueError):
        stream(*args)


def test_replicate_zero_is_master():
    assert replicate_seed(5, 0) == 5


def test_replicate_seeds_do_not_collide_across_masters():
    # master + index would map (5, 1) and (6, 0) to the same seed
    seeds = {(m, i): replicate_seed(m, i) for m in range(8) for i in range(1, 8)}
    assert len(set(seeds.values())) == len(seeds)
    assert replicate_seed(5, 1) != replicate_seed(6, 0)
    assert replicate_seed(5, 1) == replicate_seed(5, 1)
    assert all(0 <= s < 2**63 for s in seeds.values())


def test_replicate_negative_rejected():
    with pytest.raises(ValueError):
        replicate_seed(0, -1)
