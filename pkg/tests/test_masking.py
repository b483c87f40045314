import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ridgevlp.errors import ConfigurationError, DimensionError
from ridgevlp.imaging import PatchGrid
from ridgevlp.masking import (EPSILON, apply_image_mask, filter_guided_mask, masked_count,
                              random_patch_mask, round_half_up, text_mask, weighted_patch_mask)
from ridgevlp.ridge import ResponseMap
from ridgevlp.text import TokenSequence


def _grid(n_side, patch=2):
    return PatchGrid(patch, n_side, n_side)


def _expected(ratio_text, total):
    """floor(r * n + 1/2) in exact rational arithmetic."""
    return math.floor(Fraction(ratio_text) * total + Fraction(1, 2))


def _tokens(n_maskable, pad=3):
    ids = np.array([1] + [10 + i for i in range(n_maskable)] + [0] * pad)
    return TokenSequence(ids, ids > 3)


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 2.4999, 6.0)] == [1, 2, 3, 2, 6]
    # binary floating point would give 0.15 * 30 = 4.4999...
    assert masked_count(0.15, 30) == 5


@pytest.mark.parametrize("side", [2, 4, 8, 14])
@pytest.mark.parametrize("tenths", range(11))
def test_count_exactness(side, tenths):
    ratio_text = f"0.{tenths}" if tenths < 10 else "1.0"
    grid = _grid(side)
    want = _expected(ratio_text, grid.num_patches)
    m = random_patch_mask(grid, float(ratio_text), seed=7)
    assert m.count == want
    w = np.random.default_rng(side).random(grid.num_patches) + EPSILON
    assert weighted_patch_mask(grid, w, float(ratio_text), seed=7).count == want


def test_random_extremes():
    grid = _grid(4)
    assert random_patch_mask(grid, 0.0, 1).count == 0
    assert random_patch_mask(grid, 1.0, 1).count == 16


def test_determinism():
    grid = _grid(4)
    a = random_patch_mask(grid, 0.75, 99)
    b = random_patch_mask(grid, 0.75, 99)
    np.testing.assert_array_equal(a.masked, b.masked)
    assert any(not np.array_equal(a.masked, random_patch_mask(grid, 0.75, s).masked)
               for s in range(100, 110))


@pytest.mark.parametrize("ratio", [-0.1, 1.5])
def test_ratio_out_of_range(ratio):
    with pytest.raises(ConfigurationError):
        random_patch_mask(_grid(2), ratio, 0)
    with pytest.raises(ConfigurationError):
        text_mask(_tokens(4), True, 0, ratio=ratio)


@pytest.mark.parametrize("seed", range(20))
def test_flat_response_matches_random(seed):
    grid = PatchGrid(4, 4, 4)
    flat = ResponseMap(np.zeros((16, 16)), (1.0,))
    np.testing.assert_array_equal(filter_guided_mask(grid, flat, 0.5, seed).masked,
                                  random_patch_mask(grid, 0.5, seed).masked)


def test_filter_guided_all_patches_at_ratio_one():
    grid = PatchGrid(4, 2, 2)
    resp = np.zeros((8, 8))
    resp[:4, :4] = 5.0
    assert filter_guided_mask(grid, resp, 1.0, 3).count == 4


def test_filter_guided_dimension_mismatch():
    with pytest.raises(DimensionError):
        filter_guided_mask(PatchGrid(4, 2, 2), np.zeros((8, 12)), 0.5, 0)


def test_concentrated_response_wins_most_often():
    grid = PatchGrid(2, 2, 2)
    resp = np.full((4, 4), 0.1)
    resp[2:, :2] = 1.0  # patch 2
    counts = np.zeros(4)
    for s in range(10_000):
        counts += filter_guided_mask(grid, resp, 0.25, s).masked
    assert np.argmax(counts) == 2
    # single weighted draw: P(patch 2) = 1.0 / (1.0 + 3 * 0.1)
    w = np.array([0.1, 0.1, 1.0, 0.1]) + EPSILON
    assert abs(counts[2] / 10_000 - w[2] / w.sum()) < 0.02


@pytest.mark.slow
def test_weighted_marginal_100k_seeds():
    grid = PatchGrid(1, 2, 2)
    w = np.array([3.0, 1.0, 1.0, 1.0])
    hits = sum(weighted_patch_mask(grid, w, 0.25, s).masked[0] for s in range(100_000))
    assert abs(hits / 100_000 - 0.5) <= 0.01


def test_apply_mask_cases(rng):
    grid = PatchGrid(4, 2, 2)
    img = rng.random((8, 8))
    empty = random_patch_mask(grid, 0.0, 0)
    np.testing.assert_array_equal(apply_image_mask(img, empty), img)
    full = random_patch_mask(grid, 1.0, 0)
    np.testing.assert_array_equal(apply_image_mask(img, full, 0.5), 0.5)
    one = random_patch_mask(grid, 0.25, 0)
    assert np.count_nonzero(apply_image_mask(img, one, 0.5) != img) == 16


def test_apply_mask_shape_check():
    with pytest.raises(DimensionError):
        apply_image_mask(np.zeros((6, 6)), random_patch_mask(PatchGrid(4, 2, 2), 0.5, 0))


@pytest.mark.parametrize("n,paired,want", [(20, True, 6), (20, False, 3), (1, False, 1),
                                           (1, True, 1), (3, False, 1)])
def test_text_mask_counts(n, paired, want):
    tm = text_mask(_tokens(n), paired, seed=5)
    assert len(tm.positions) == want


def test_text_ratio_constants_follow_the_published_values():
    assert text_mask(_tokens(20), True, 0).ratio_requested == 0.30
    assert text_mask(_tokens(20), False, 0).ratio_requested == 0.15


def test_text_mask_without_maskable_tokens():
    ids = np.array([1, 0, 0])
    assert text_mask(TokenSequence(ids, ids > 3), True, 0).positions == ()


@given(st.integers(0, 40), st.integers(0, 6), st.booleans(), st.integers(0, 2**63 - 1))
def test_text_mask_invariants(n, pad, paired, seed):
    seq = _tokens(n, pad)
    tm = text_mask(seq, paired, seed)
    pos = list(tm.positions)
    assert pos == sorted(set(pos))
    assert all(seq.maskable[p] for p in pos)
    ratio = "0.30" if paired else "0.15"
    assert len(pos) == (max(1, _expected(ratio, n)) if n else 0)
    again = text_mask(seq, paired, seed)
    assert again.positions == tm.positions
    assert tm.as_bool(len(seq.ids)).sum() == len(pos)


@given(st.integers(1, 8), st.floats(0, 1), st.integers(0, 2**63 - 1))
def test_patch_mask_is_pure(side, ratio, seed):
    grid = _grid(side)
    w = np.linspace(0.1, 1.0, grid.num_patches)
    a = weighted_patch_mask(grid, w, ratio, seed)
    b = weighted_patch_mask(grid, w.copy(), ratio, seed)
    np.testing.assert_array_equal(a.masked, b.masked)
    assert a.count == round_half_up(ratio * grid.num_patches) or a.count == masked_count(
        ratio, grid.num_patches)
