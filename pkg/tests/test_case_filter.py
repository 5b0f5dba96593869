import colorsys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from grnea.case_filter import (BLACK, WHITE, FilterConfig, binarize_outline, calibrate_threshold,
                               default_threshold, is_reasonable, noise_count, noise_counts, occlude,
                               outline, rgb_to_hsv)
from grnea.fieldbench import FiberBenchmark

outline_arrays = arrays(np.bool_, (6, 5)).map(lambda m: np.where(m[..., None], WHITE, BLACK))


def cfg_for(image, threshold=10):
    return FilterConfig.from_reference_image(image, threshold)


def test_rgb_to_hsv_examples():
    px = np.array([[[1.0, 0, 0], [1, 1, 1], [0, 0, 0]]])
    np.testing.assert_array_equal(rgb_to_hsv(px)[0], [[0, 255, 255], [0, 0, 255], [0, 0, 0]])


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_rgb_to_hsv_matches_colorsys(r, g, b):
    h, s, v = colorsys.rgb_to_hsv(r, g, b)
    got = rgb_to_hsv(np.array([[[r, g, b]]]))[0, 0]
    assert abs(got[1] - s * 255) <= 0.5 + 1e-9
    assert abs(got[2] - v * 255) <= 0.5 + 1e-9
    if s > 0.05 and v > 0.05:
        dh = abs(got[0] - (h * 180) % 180)
        assert min(dh, 180 - dh) <= 0.5 + 1e-6
    assert 0 <= got[0] < 180 and 0 <= got[1] <= 255 and 0 <= got[2] <= 255


def test_binarize_examples():
    cfg = FilterConfig(np.zeros((1, 3, 3)), 1)
    hsv = np.array([[[90, 10, 240], [90, 200, 240], [90, 10, 100]]])
    np.testing.assert_array_equal(binarize_outline(hsv, cfg)[0], [WHITE, BLACK, BLACK])
    edges = np.array([[[0, 30, 221], [179, 31, 255], [5, 0, 220]]])
    np.testing.assert_array_equal(binarize_outline(edges, cfg)[0], [WHITE, BLACK, BLACK])


@settings(max_examples=50, deadline=None)
@given(arrays(np.int64, (4, 4, 3), elements=st.integers(0, 179)))
def test_binarize_idempotent_two_valued(hsv):
    cfg = FilterConfig(np.zeros((4, 4, 3)), 1)
    once = binarize_outline(hsv, cfg)
    np.testing.assert_array_equal(binarize_outline(once, cfg), once)
    assert ((once == WHITE).all(-1) | (once == BLACK).all(-1)).all()


def test_noise_count_examples():
    a = np.where(np.zeros((64, 64, 1), bool), WHITE, BLACK)
    assert noise_count(a, a) == 0
    b = a.copy()
    b[3, 7] = WHITE
    assert noise_count(a, b) == 1
    assert noise_count(a, np.where(np.ones((64, 64, 1), bool), WHITE, BLACK)) == 4096
    with pytest.raises(ValueError, match="shapes"):
        noise_count(a, a[:10])


@settings(max_examples=50, deadline=None)
@given(outline_arrays, outline_arrays, outline_arrays)
def test_noise_count_is_metric(a, b, c):
    assert noise_count(a, b) == noise_count(b, a)
    assert (noise_count(a, b) == 0) == np.array_equal(a, b)
    assert noise_count(a, c) <= noise_count(a, b) + noise_count(b, c)


@settings(max_examples=50, deadline=None)
@given(outline_arrays, outline_arrays, st.integers(0, 29))
def test_noise_count_monotone_under_flips(u_i, u_o, k):
    away = u_i.copy()
    flat = away.reshape(-1, 3)
    agree = np.flatnonzero((u_i == u_o).all(-1).ravel())
    for idx in agree[:k]:
        flat[idx] = WHITE if (flat[idx] == BLACK).all() else BLACK
    assert noise_count(away, u_o) == noise_count(u_i, u_o) + min(k, len(agree))


def test_reference_accepted():
    fb = FiberBenchmark()
    img = fb.render(fb.midpoint(), 64)
    assert is_reasonable(img, cfg_for(img, 1)) == (True, 0)


def test_decision_boundary_inclusive():
    fb = FiberBenchmark()
    ref = fb.render(fb.midpoint(), 32)
    img = ref.copy()
    img[20:23, 10:12] = 1.0  # 6 newly white field pixels
    n = noise_count(outline(img, cfg_for(ref)), cfg_for(ref).reference)
    assert n == 6
    assert is_reasonable(img, cfg_for(ref, 6)) == (True, 6)
    assert is_reasonable(img, cfg_for(ref, 5)) == (False, 6)


def test_noise_counts_vectorized():
    fb = FiberBenchmark()
    ref = fb.render(fb.midpoint(), 32)
    cfg = cfg_for(ref)
    rng = np.random.default_rng(0)
    imgs = np.stack([occlude(ref, rng, size=8) for _ in range(5)])
    np.testing.assert_array_equal(noise_counts(imgs, cfg), [is_reasonable(i, cfg)[1] for i in imgs])


def test_default_thresholds():
    assert default_threshold("fiber", 256) == 3600
    assert default_threshold("strain", 256) == 1000
    assert default_threshold("fiber", 64) == 225
    assert default_threshold("strain", 64) == 62


def test_threshold_must_be_positive():
    with pytest.raises(ValueError):
        FilterConfig(np.zeros((2, 2, 3)), 0)


def test_calibrate_identical_floor():
    fb = FiberBenchmark()
    ref = fb.render(fb.midpoint(), 32)
    assert calibrate_threshold([ref] * 20, cfg_for(ref)) == 1


def test_calibrate_quantile_one_covers_max():
    fb = FiberBenchmark()
    ref = fb.render(fb.midpoint(), 32)
    cfg = cfg_for(ref)
    rng = np.random.default_rng(1)
    recs = [occlude(ref, rng, size=int(s)) for s in rng.integers(1, 10, size=30)]
    c = calibrate_threshold(recs, cfg, quantile=1.0)
    assert c >= noise_counts(np.stack(recs), cfg).max()
    assert all(is_reasonable(r, FilterConfig(cfg.reference, c))[0] for r in recs)


def test_calibrate_validation():
    ref = np.ones((8, 8, 3))
    cfg = cfg_for(ref)
    with pytest.raises(ValueError, match="no reconstructions"):
        calibrate_threshold([], cfg)
    with pytest.raises(ValueError, match="at least 20"):
        calibrate_threshold([ref] * 19, cfg)
    with pytest.raises(ValueError, match="quantile"):
        calibrate_threshold([ref] * 20, cfg, quantile=0.0)


def test_occlusion_patch():
    img = np.zeros((64, 64, 3))
    out = occlude(img, np.random.default_rng(0))
    assert (out == 1.0).all(-1).sum() == 400
    assert (img == 0).all()


def test_config_persistence(tmp_path):
    fb = FiberBenchmark()
    cfg = cfg_for(fb.render(fb.midpoint(), 32), 77)
    cfg.save(tmp_path / "f.ckpt")
    back = FilterConfig.load(tmp_path / "f.ckpt")
    assert back.threshold == 77 and (back.s_max, back.v_min) == (30, 221)
    np.testing.assert_array_equal(back.reference, cfg.reference)
