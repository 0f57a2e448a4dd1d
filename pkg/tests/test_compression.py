# tests/test_compression.py

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from byzsgd.compression import (
    CoordinateSet,
    compressed_minibatch_gradient,
    draw_coords,
    embed,
    restrict,
    select_scale,
)
from byzsgd.model import local_full_gradient


def test_draw_coords_sorted_distinct():
    K = draw_coords(np.random.default_rng(0), 10, 4)
    assert K.k == 4
    assert list(K.indices) == sorted(set(K.indices))
    assert all(0 <= i < 10 for i in K.indices)


@pytest.mark.parametrize("k", [0, 11])
def test_draw_coords_rejects_bad_k(k):
    with pytest.raises(ValueError):
        draw_coords(np.random.default_rng(0), 10, k)


def test_coordinate_set_validation():
    with pytest.raises(ValueError):
        CoordinateSet((2, 1), 4)
    with pytest.raises(ValueError):
        CoordinateSet((0, 4), 4)


def test_select_scale_example():
    K = CoordinateSet((0, 2), 4)
    np.testing.assert_array_equal(select_scale(np.array([1.0, 2.0, 3.0, 4.0]), K, 4, 2), [2.0, 0.0, 6.0, 0.0])


def test_select_scale_full_set_is_identity():
    v = np.array([0.5, -1.5, 2.0])
    np.testing.assert_array_equal(select_scale(v, CoordinateSet.full(3), 3, 3), v)


def test_select_scale_rejects_mismatched_set():
    with pytest.raises(ValueError):
        select_scale(np.ones(4), CoordinateSet((0,), 4), 4, 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12).flatmap(lambda d: st.tuples(st.just(d), st.integers(1, d), st.integers(0, 2**31))))
def test_select_scale_support_and_scaling(args):
    d, k, seed = args
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(d)
    K = draw_coords(rng, d, k)
    out = select_scale(v, K, d, k)
    outside = np.setdiff1d(np.arange(d), K.array)
    assert np.all(out[outside] == 0.0)
    np.testing.assert_allclose(out[K.array], (d / k) * v[K.array])


def test_restrict_embed():
    K = CoordinateSet((1, 3), 5)
    v = np.arange(5.0)
    np.testing.assert_array_equal(restrict(v, K), [1.0, 3.0])
    np.testing.assert_array_equal(embed(restrict(v, K), K, 5), [0.0, 1.0, 0.0, 3.0, 0.0])
    with pytest.raises(ValueError):
        embed(np.ones(3), K, 5)


def test_compressed_full_batch_matches_select_scale(quadratic, small_worlds):
    ds = small_worlds[2]
    x = np.full(ds.dim, 0.25)
    K = CoordinateSet((0, 3), ds.dim)
    g = compressed_minibatch_gradient(np.random.default_rng(1), quadratic, ds, ds.n, x, K)
    expected = select_scale(local_full_gradient(quadratic, ds, x), K, ds.dim, 2)
    np.testing.assert_allclose(g, expected, atol=1e-12)


def test_unbiased_over_all_coordinate_sets():
    """Averaging (d/k) select_K(v) over every size-k subset returns v"""
    from itertools import combinations

    d, k = 5, 2
    v = np.array([1.0, -2.0, 0.5, 3.0, 4.0])
    sets = [CoordinateSet(c, d) for c in combinations(range(d), k)]
    mean = np.mean([select_scale(v, K, d, k) for K in sets], axis=0)
    np.testing.assert_allclose(mean, v, atol=1e-12)
