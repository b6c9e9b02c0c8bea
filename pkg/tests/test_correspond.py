"""Similarity, argmax matching, and the skewness ambiguity score."""

from __future__ import annotations

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from vsmatch.correspond import (
    FeatureMatrix,
    argmax_match,
    best_match_scores,
    flatten_layer,
    full_mask,
    normalize_rows,
    row_skewness,
    row_skewness_bulk,
    sample_skewness,
    similarity,
)
from vsmatch.errors import IntegrityError
from vsmatch.store import FeatureStack, LayerBlock, Mask


def feat(values: np.ndarray, grid=None) -> FeatureMatrix:
    values = np.asarray(values, dtype=np.float64)
    if grid is None:
        grid = (1, values.shape[0])
    return FeatureMatrix(values, grid)


# ---------------------------------------------------------------------------
# flattening and normalization
# ---------------------------------------------------------------------------

def test_flatten_2x2_single_channel_row_major():
    values = np.array([[[1.0], [2.0]], [[3.0], [4.0]]], dtype=np.float32)
    stack = FeatureStack("img", [LayerBlock(6, values)])
    fm = flatten_layer(stack, 6, normalize=False)
    assert fm.values.shape == (4, 1)
    # flat index k = y * w + x: (0,0), (1,0), (0,1), (1,1)
    np.testing.assert_array_equal(fm.values[:, 0], [1.0, 2.0, 3.0, 4.0])
    assert fm.grid == (2, 2)
    assert not fm.normalized


def test_flatten_missing_layer_is_key_error():
    stack = FeatureStack("img", [LayerBlock(6, np.zeros((1, 1, 1), np.float32))])
    with pytest.raises(KeyError):
        flatten_layer(stack, 7)


def test_normalize_three_four_row():
    normed, zero = normalize_rows(np.array([[3.0, 4.0]]))
    np.testing.assert_allclose(normed, [[0.6, 0.8]], atol=1e-12)
    assert not zero[0]


def test_normalize_keeps_zero_rows_zero_and_flags_them():
    normed, zero = normalize_rows(np.array([[0.0, 0.0], [1.0, 0.0]]))
    np.testing.assert_array_equal(normed[0], [0.0, 0.0])
    np.testing.assert_array_equal(zero, [True, False])


def test_flatten_normalized_rows_are_unit():
    rng = np.random.default_rng(7)
    values = rng.standard_normal((3, 5, 4)).astype(np.float32)
    stack = FeatureStack("img", [LayerBlock(6, values)])
    fm = flatten_layer(stack, 6)
    assert fm.normalized
    np.testing.assert_allclose(np.linalg.norm(fm.values, axis=1), 1.0, atol=1e-6)


# ---------------------------------------------------------------------------
# similarity
# ---------------------------------------------------------------------------

def test_similarity_transpose_symmetry(rng):
    a = feat(rng.standard_normal((6, 4)), grid=(2, 3))
    b = feat(rng.standard_normal((8, 4)), grid=(2, 4))
    d_ab = similarity(a, b)
    d_ba = similarity(b, a)
    np.testing.assert_allclose(d_ab.values, d_ba.values.T, atol=1e-12)
    assert d_ab.grid_a == (2, 3) and d_ab.grid_b == (2, 4)


def test_similarity_of_orthonormal_rows_is_identity():
    eye = feat(np.eye(4), grid=(2, 2))
    np.testing.assert_allclose(similarity(eye, eye).values, np.eye(4), atol=1e-12)


def test_similarity_dim_mismatch():
    with pytest.raises(IntegrityError, match="dims"):
        similarity(feat(np.zeros((2, 3))), feat(np.zeros((2, 4))))


# ---------------------------------------------------------------------------
# argmax matching
# ---------------------------------------------------------------------------

def test_argmax_match_picks_row_maxima():
    d = similarity(feat(np.eye(4) * 2.0, grid=(2, 2)), feat(np.eye(4), grid=(2, 2)))
    corr = argmax_match(d, full_mask((2, 2)), full_mask((2, 2)))
    np.testing.assert_array_equal(corr.points_a, corr.points_b)
    np.testing.assert_allclose(corr.scores, 2.0)
    np.testing.assert_array_equal(corr.skewness, 0.0)


def test_argmax_match_breaks_ties_toward_smallest_flat_index():
    from vsmatch.correspond import SimilarityMatrix

    values = np.array([[1.0, 1.0, 0.5, 1.0]])
    d = SimilarityMatrix(values, (1, 1), (2, 2))
    corr = argmax_match(d, full_mask((1, 1)), full_mask((2, 2)))
    assert tuple(corr.points_b[0]) == (0, 0)  # flat index 0 among the tied {0, 1, 3}


def test_argmax_match_respects_candidate_mask():
    from vsmatch.correspond import SimilarityMatrix

    values = np.array([[9.0, 1.0, 2.0, 0.0]])
    mask_b = Mask(np.array([[0, 1], [1, 0]], dtype=np.uint8))  # flat {1, 2} allowed
    d = SimilarityMatrix(values, (1, 1), (2, 2))
    corr = argmax_match(d, full_mask((1, 1)), mask_b)
    assert tuple(corr.points_b[0]) == (0, 1)  # flat 2 = (x=0, y=1), score 2.0
    assert corr.scores[0] == pytest.approx(2.0)


def test_argmax_match_empty_target_mask():
    from vsmatch.correspond import SimilarityMatrix

    d = SimilarityMatrix(np.zeros((1, 4)), (1, 1), (2, 2))
    with pytest.raises(IntegrityError, match="no candidate targets"):
        argmax_match(d, full_mask((1, 1)), Mask(np.zeros((2, 2), np.uint8)))


def test_argmax_match_mask_grid_mismatch():
    from vsmatch.correspond import SimilarityMatrix

    d = SimilarityMatrix(np.zeros((4, 4)), (2, 2), (2, 2))
    with pytest.raises(IntegrityError, match="mask_a"):
        argmax_match(d, full_mask((1, 4)), full_mask((2, 2)))


def test_argmax_match_column_permutation_equivariance(rng):
    from vsmatch.correspond import SimilarityMatrix

    values = rng.standard_normal((5, 6))
    perm = rng.permutation(6)
    base = argmax_match(
        SimilarityMatrix(values, (1, 5), (1, 6)), full_mask((1, 5)), full_mask((1, 6))
    )
    shuffled = argmax_match(
        SimilarityMatrix(values[:, perm], (1, 5), (1, 6)), full_mask((1, 5)), full_mask((1, 6))
    )
    inv = np.empty(6, dtype=int)
    inv[perm] = np.arange(6)
    # column k of the shuffled matrix is column perm[k] of the original, so
    # the winning index moves through the inverse permutation
    np.testing.assert_array_equal(shuffled.points_b[:, 0], inv[base.points_b[:, 0]])
    np.testing.assert_allclose(shuffled.scores, base.scores)


def test_best_match_scores_match_argmax_scores(rng):
    from vsmatch.correspond import SimilarityMatrix

    d = SimilarityMatrix(rng.standard_normal((6, 9)), (2, 3), (3, 3))
    mask_a = Mask((rng.random((2, 3)) < 0.7).astype(np.uint8))
    if mask_a.area == 0:
        mask_a = full_mask((2, 3))
    scores = best_match_scores(d, mask_a, full_mask((3, 3)))
    corr = argmax_match(d, mask_a, full_mask((3, 3)))
    np.testing.assert_allclose(scores, corr.scores, atol=1e-6)


# ---------------------------------------------------------------------------
# skewness
# ---------------------------------------------------------------------------

def test_skewness_three_zeros_one_one_is_exactly_two():
    value, flat = sample_skewness(np.array([0.0, 0.0, 0.0, 1.0]))
    assert not flat
    assert value == pytest.approx(2.0, abs=1e-9)


def test_skewness_matches_scipy_adjusted(rng):
    for _ in range(10):
        x = rng.standard_normal(rng.integers(3, 40))
        value, flat = sample_skewness(x)
        assert not flat
        assert value == pytest.approx(scipy.stats.skew(x, bias=False), abs=1e-9)


def test_skewness_constant_row_is_flat_zero():
    value, flat = sample_skewness(np.array([2.5, 2.5, 2.5]))
    assert value == 0.0 and flat


def test_skewness_needs_three_values():
    with pytest.raises(IntegrityError, match="at least 3"):
        sample_skewness(np.array([1.0, 2.0]))


def test_skewness_symmetric_data_is_zero():
    value, _ = sample_skewness(np.array([-2.0, -1.0, 1.0, 2.0]))
    assert value == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.floats(min_value=0.01, max_value=100.0),
    st.floats(min_value=-50.0, max_value=50.0),
)
def test_property_skewness_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(12)
    base, _ = sample_skewness(x)
    scaled, _ = sample_skewness(a * x + b)
    assert scaled == pytest.approx(base, abs=1e-6)
    negated, _ = sample_skewness(-a * x + b)
    assert negated == pytest.approx(-base, abs=1e-6)


def test_row_skewness_with_candidate_mask():
    from vsmatch.correspond import SimilarityMatrix

    values = np.array([[0.0, 5.0, 0.0, 0.0, 1.0, 0.0]])
    mask = Mask(np.array([[1, 0, 1, 1, 1, 1]], dtype=np.uint8))  # drop the outlier 5
    d = SimilarityMatrix(values, (1, 1), (1, 6))
    full_val, _ = row_skewness(d, 0)
    masked_val, _ = row_skewness(d, 0, candidates=mask)
    assert full_val == pytest.approx(scipy.stats.skew(values[0], bias=False), abs=1e-9)
    kept = np.array([0.0, 0.0, 0.0, 1.0, 0.0])
    assert masked_val == pytest.approx(scipy.stats.skew(kept, bias=False), abs=1e-9)


def test_row_skewness_bulk_agrees_with_scalar(rng):
    from vsmatch.correspond import SimilarityMatrix

    values = rng.standard_normal((12, 16))
    d = SimilarityMatrix(values, (3, 4), (4, 4))
    mask_a = Mask((rng.random((3, 4)) < 0.6).astype(np.uint8))
    mask_b = Mask((rng.random((4, 4)) < 0.6).astype(np.uint8))
    if mask_a.area == 0 or mask_b.area < 3:
        mask_a, mask_b = full_mask((3, 4)), full_mask((4, 4))
    bulk, flats = row_skewness_bulk(d, mask_a, mask_b)
    rows = np.flatnonzero(mask_a.bits.ravel())
    for out, flat, row in zip(bulk, flats, rows):
        scalar, scalar_flat = row_skewness(d, int(row), candidates=mask_b)
        assert out == pytest.approx(scalar, abs=1e-9)
        assert flat == scalar_flat


def test_row_skewness_bulk_needs_three_candidates():
    from vsmatch.correspond import SimilarityMatrix

    d = SimilarityMatrix(np.zeros((4, 4)), (2, 2), (2, 2))
    two = Mask(np.array([[1, 1], [0, 0]], dtype=np.uint8))
    with pytest.raises(IntegrityError, match="at least 3"):
        row_skewness_bulk(d, full_mask((2, 2)), two)
