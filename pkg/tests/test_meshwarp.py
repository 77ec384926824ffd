import numpy as np
import pytest
from hypothesis import given, strategies as st

from panostitch.meshwarp import (AffineModel, BlockGrid, DegenerateBlockError, MeshWarpConfig,
                                 NoMatchError, RankDeficientError, apply_mesh_warp, confidence,
                                 estimate_disparity, expand_regions, fit_affine, group_regions,
                                 initial_disparity, ncc, refine_pair)
from panostitch.projection import WarpedLayer

from conftest import LEVEL, make_layers, textured, two_depth_pair


def gray(layer):
    return layer.color.astype(float).mean(-1)


def shift_pair(rng, shift, h=32, w=96):
    """``tgt(y, x + shift) = ref(y, x)`` with fully valid layers."""
    pad = 40
    base = textured(rng, h, w + 2 * pad).mean(-1)
    ref = base[:, pad:pad + w]
    tgt = base[:, pad - shift:pad - shift + w]
    ones = np.ones((h, w), bool)
    return ref, ones, tgt, ones


def test_ncc_examples(rng):
    x = rng.random((8, 8))
    assert ncc(x, x) == pytest.approx(1.0, abs=1e-12)
    assert ncc(x, -x + 2 * x.mean()) == pytest.approx(-1.0, abs=1e-12)
    assert -1 <= ncc(x, rng.random((8, 8))) <= 1
    with pytest.raises(DegenerateBlockError):
        ncc(np.full((4, 4), 0.5), x[:4, :4])
    with pytest.raises(ValueError):
        ncc(x, x[:4])


def test_ncc_with_mask(rng):
    x = rng.random((6, 6))
    y = x.copy()
    mask = np.ones((6, 6), bool)
    mask[:, :2] = False
    y[:, :2] = rng.random((6, 2))
    assert ncc(x, y, mask) == pytest.approx(1.0, abs=1e-12)


def test_shift_of_seven(rng):
    ref, rv, tgt, tv = shift_pair(rng, 7)
    d, s = initial_disparity(ref, rv, tgt, tv, slice(0, 32), slice(40, 72), 10)
    assert d == 7 and s == pytest.approx(1.0, abs=1e-12)
    d, s = initial_disparity(ref, rv, ref, rv, slice(0, 32), slice(40, 72), 10)
    assert d == 0


def test_radius_zero_has_one_candidate(rng):
    a, b = rng.random((16, 16)), rng.random((16, 16))
    v = np.ones((16, 16), bool)
    d, _ = initial_disparity(a, v, b, v, slice(0, 16), slice(0, 16), 0)
    assert d == 0


def test_all_degenerate_is_no_match():
    a = np.full((8, 8), 0.3)
    v = np.ones((8, 8), bool)
    with pytest.raises(NoMatchError):
        initial_disparity(a, v, a, v, slice(0, 8), slice(0, 8), 2)


def test_tie_breaks_toward_small_then_negative():
    # a row periodic with period 4: shifts 0 and +-4 all correlate perfectly
    row = np.tile([0.0, 1.0, 0.5, 0.2], 10)
    img = np.tile(row, (4, 1))
    v = np.ones(img.shape, bool)
    d, s = initial_disparity(img, v, img, v, slice(0, 4), slice(12, 24), 8)
    assert d == 0
    # shifted by 2: candidates -2 and +2 tie
    tgt = np.roll(img, 2, axis=1)
    d, s = initial_disparity(img, v, tgt, v, slice(0, 4), slice(12, 24), 3)
    assert d == -2 and s == pytest.approx(1.0)


@given(shift=st.integers(-12, 12), seed=st.integers(0, 2**31))
def test_disparity_recovery(shift, seed):
    ref, rv, tgt, tv = shift_pair(np.random.default_rng(seed), shift)
    d, s = initial_disparity(ref, rv, tgt, tv, slice(0, 32), slice(32, 64), 12)
    assert d == shift and s >= 0.99


def test_confidence_examples():
    assert confidence(3, 3, 1.0, 1.0) == pytest.approx(1.0)
    assert confidence(3, 3, 0.0, 1.0) == pytest.approx(0.8)
    assert confidence(3, 3, 1.0, None) == pytest.approx(0.6)
    assert confidence(3, 3, 1.0, float("nan")) == pytest.approx(0.6)


@given(d=st.floats(-40, 40), mean=st.floats(-40, 40), eta=st.floats(0, 1), s=st.floats(-1, 1))
def test_confidence_bounds_and_monotone(d, mean, eta, s):
    m = confidence(d, mean, eta, s)
    assert 0.0 <= m <= 1.0
    assert confidence(mean + abs(d - mean) + 1.0, mean, eta, s) < m


def test_group_regions_examples():
    assert group_regions([5, 5, 6, 12, 12], 2) == [[0, 1, 2], [3, 4]]
    assert group_regions([4, 4, 4, 4]) == [[0, 1, 2, 3]]
    assert group_regions([0, 30, -7, 100], np.inf) == [[0, 1, 2, 3]]
    assert group_regions([1, 1, 1, 1], 2, usable=[True, False, True, True]) == [[0], [2, 3]]


def test_block_grid_tiles_overlap():
    g = BlockGrid.over((10, 75, 5, 100), 32)
    assert g.m >= 1 and g.n >= 1
    rows = np.zeros(75, int)
    cols = np.zeros(100, int)
    for i in range(g.m):
        rows[g.strip_rows(i)] += 1
    for j in range(g.n):
        cols[g.block_cols(j)] += 1
    assert (rows[10:] == 1).all() and not rows[:10].any()
    assert (cols[5:] == 1).all() and not cols[:5].any()


def test_consistent_region_is_a_fixed_point(rng):
    ref, rv, tgt, tv = shift_pair(rng, 4, h=64)
    grid = BlockGrid.over((0, 64, 16, 80), 16)
    fld = estimate_disparity(ref, rv, tgt, tv, grid, MeshWarpConfig(block=16, radius=8))
    np.testing.assert_array_equal(fld.row_d, 4)
    regions = group_regions(fld.row_d)
    D, sweeps = expand_regions(ref, rv, tgt, tv, grid, fld, regions)
    np.testing.assert_array_equal(D, 4)
    assert sweeps == 1


def test_two_depth_recovery():
    ref, tgt = two_depth_pair()
    cfg = MeshWarpConfig(block=16, radius=16)
    res = refine_pair(ref, tgt, cfg)
    D = res.disparity.refined
    half = res.grid.m // 2
    np.testing.assert_array_equal(D[:half], 3)
    np.testing.assert_array_equal(D[half:], 9)
    assert len(res.regions) == 2
    # termination bound: rows x window size
    assert res.sweeps <= len(D) * (2 * int(cfg.tau_d) + 1)
    for model, shift in zip(res.models, (3, 9)):
        np.testing.assert_allclose(model.A, np.eye(2), atol=1e-9)
        np.testing.assert_allclose(model.t, (shift, 0), atol=1e-9)
    before = np.abs(gray(ref) - gray(tgt)).mean()
    both = res.layer.valid & ref.valid
    after = np.abs(gray(ref) - gray(res.layer))[both].mean()
    assert after <= 0.5 * before


def test_fit_affine_examples(rng):
    p = rng.uniform(0, 100, (20, 2))
    m = fit_affine(p, p + (3.0, 0.0))
    np.testing.assert_allclose(m.A, np.eye(2), atol=1e-9)
    np.testing.assert_allclose(m.t, (3, 0), atol=1e-9)
    m = fit_affine(p, p)
    np.testing.assert_allclose(m.A, np.eye(2), atol=1e-9)
    np.testing.assert_allclose(m.t, 0, atol=1e-9)


@given(seed=st.integers(0, 2**31))
def test_fit_affine_recovers_random_models(seed):
    rng = np.random.default_rng(seed)
    A = np.eye(2) + rng.uniform(-0.3, 0.3, (2, 2))
    t = rng.uniform(-20, 20, 2)
    p = rng.uniform(0, 200, (12, 2))
    m = fit_affine(p, p @ A.T + t)
    np.testing.assert_allclose(m.A, A, atol=1e-9)
    np.testing.assert_allclose(m.t, t, atol=1e-9)


def test_fit_affine_rank_deficiency():
    with pytest.raises(RankDeficientError):
        fit_affine([[0, 0], [1, 1]], [[0, 0], [1, 1]])
    line = np.c_[np.arange(6.0), 2 * np.arange(6.0) + 1]
    with pytest.raises(RankDeficientError):
        fit_affine(line, line + 1)


def test_affine_model_orientation():
    with pytest.raises(ValueError):
        AffineModel(np.diag([1.0, -1.0]), np.zeros(2))


def test_identity_warp_keeps_layer(rng):
    img = textured(rng, 40, 48)
    (layer,) = make_layers([img], [np.ones((40, 48))])
    out = apply_mesh_warp(layer, [AffineModel(np.eye(2), np.zeros(2))], [(0, 40)])
    assert out.valid.all()
    assert np.abs(out.color - layer.color).max() <= LEVEL


def test_translation_warp_matches_direct_shift(rng):
    img = textured(rng, 40, 64)
    v = np.ones((40, 64), bool)
    (layer,) = make_layers([img], [v])
    out = apply_mesh_warp(layer, [AffineModel.translation(5.0)], [(0, 40)])
    # sampling at x + 5: columns past W - 6 leave the layer
    np.testing.assert_array_equal(out.valid[:, :59], True)
    assert not out.valid[:, 59:].any()
    assert np.abs(out.color[:, :59] - layer.color[:, 5:]).max() <= LEVEL
    assert np.isfinite(out.color).all()


def test_mask_moves_with_colour(rng):
    img = textured(rng, 32, 32)
    v = np.zeros((32, 32), bool)
    v[:, 10:20] = True
    (layer,) = make_layers([img * v[..., None]], [v])
    out = apply_mesh_warp(layer, [AffineModel.translation(-4.0)], [(0, 32)])
    np.testing.assert_array_equal(out.valid[:, 14:24], True)
    assert out.valid.sum() == v.sum()
    assert not out.color[~out.valid].any()


def test_fold_over_warns(rng):
    (layer,) = make_layers([textured(rng, 32, 32)], [np.ones((32, 32))])
    # vertices left of column 16 jump 40 px right, past their identity neighbours
    with pytest.warns(RuntimeWarning):
        out = apply_mesh_warp(layer, [AffineModel.translation(40.0)], [(0, 32)], cell=8,
                              columns=(0, 16))
    assert any("fold-over" in w for w in out.warnings)


def test_refine_pair_without_overlap():
    a, b = make_layers([np.zeros((8, 8, 3))] * 2, [np.zeros((8, 8)), np.ones((8, 8))])
    res = refine_pair(a, b)
    assert res.layer is b
