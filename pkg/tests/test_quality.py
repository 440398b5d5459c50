import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mlvc.quality import (eme, logamee, rgb_to_hsv, rgb_to_lab, sobel_magnitude, trace_quality, trimmed_stats,
                          uciqe, uciqe_components, uicm, uiconm, uiqm, uism)
from oracles import naive_eme, naive_sobel, naive_uciqe, naive_uicm, naive_uiconm, naive_uiqm, naive_uism


def color_image(h, w, seed):
    return np.random.default_rng(seed).integers(0, 256, (h, w, 3)).astype(np.uint8)


def px(r, g, b):
    return np.array([[[r, g, b]]], np.uint8)


class TestColorSpaces:
    def test_white_point(self):
        L, a, b = (float(v[0, 0]) for v in rgb_to_lab(px(255, 255, 255)))
        assert L == pytest.approx(100.0, abs=1e-3)
        assert abs(a) < 0.5 and abs(b) < 0.5

    def test_pure_red(self):
        # widely tabulated sRGB (D65) value for (255, 0, 0)
        L, a, b = (float(v[0, 0]) for v in rgb_to_lab(px(255, 0, 0)))
        assert abs(L - 53.24) < 1.0 and abs(a - 80.09) < 1.0 and abs(b - 67.20) < 1.0

    def test_black(self):
        L, a, b = (float(v[0, 0]) for v in rgb_to_lab(px(0, 0, 0)))
        assert (L, a, b) == (0.0, 0.0, 0.0)

    @pytest.mark.parametrize("v", [0, 1, 77, 128, 255])
    def test_gray_saturation_zero(self, v):
        _, s, _ = rgb_to_hsv(px(v, v, v))
        assert s[0, 0] == 0.0

    def test_hsv_primaries(self):
        h, s, v = rgb_to_hsv(np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255]]], np.uint8))
        np.testing.assert_allclose(h[0], [0, 120, 240])
        np.testing.assert_allclose(s[0], 1.0)
        np.testing.assert_allclose(v[0], 1.0)

    def test_lab_ranges(self):
        L, _, _ = rgb_to_lab(color_image(16, 16, 0))
        assert L.min() >= 0 and L.max() <= 100 + 1e-9

    def test_non_rgb(self):
        with pytest.raises(ValueError):
            rgb_to_lab(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            rgb_to_hsv(np.zeros((4, 4, 4)))


class TestUCIQE:
    def test_uniform_gray_zero(self):
        img = np.full((16, 16, 3), 120, np.uint8)
        assert uciqe_components(img) == pytest.approx((0.0, 0.0, 0.0), abs=1e-12)
        assert uciqe(img) == pytest.approx(0.0, abs=1e-12)

    def test_checkerboard(self):
        board = ((np.indices((16, 16)).sum(axis=0) % 2) * 255).astype(np.uint8)
        img = np.repeat(board[..., None], 3, axis=2)
        sigma_c, con_l, mu_s = uciqe_components(img)
        assert con_l == pytest.approx(1.0, abs=1e-3)
        assert mu_s == 0.0
        assert uciqe(img) == pytest.approx(0.2745, abs=1e-3)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_fixed_8x8_against_naive(self, seed):
        img = color_image(8, 8, seed)
        assert uciqe(img) == pytest.approx(naive_uciqe(img), abs=1e-6)

    def test_empty(self):
        with pytest.raises(ValueError):
            uciqe(np.zeros((0, 0, 3)))


class TestUIQM:
    def test_uniform_gray_all_zero(self):
        s = uiqm(np.full((16, 16, 3), 90, np.uint8))
        assert (s.uicm, s.uism, s.uiconm, s.uiqm) == (0.0, 0.0, 0.0, 0.0)

    def test_uniform_color_sharpness_contrast_zero(self):
        s = uiqm(np.full((16, 16, 3), (200, 40, 90), np.uint8))
        assert s.uism == 0.0 and s.uiconm == 0.0

    def test_achromatic_uicm_exact_zero(self):
        g = np.random.default_rng(3).integers(0, 256, (16, 16)).astype(np.uint8)
        assert uicm(np.repeat(g[..., None], 3, axis=2)) == 0.0

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_fixed_16x16_against_naive(self, seed):
        img = color_image(16, 16, seed)
        s = uiqm(img)
        assert s.uicm == pytest.approx(naive_uicm(img), abs=1e-6)
        assert s.uism == pytest.approx(naive_uism(img), abs=1e-6)
        assert s.uiconm == pytest.approx(naive_uiconm(img), abs=1e-6)
        assert s.uiqm == pytest.approx(naive_uiqm(img), abs=1e-6)
        assert s.uciqe == pytest.approx(naive_uciqe(img), abs=1e-6)

    def test_partial_blocks_dropped(self):
        img = color_image(19, 21, 4)
        assert uism(img) == pytest.approx(naive_uism(img), abs=1e-6)
        assert uiconm(img) == pytest.approx(naive_uiconm(img), abs=1e-6)

    def test_sobel_matches_naive(self):
        plane = np.random.default_rng(5).random((9, 11)) * 255
        np.testing.assert_allclose(sobel_magnitude(plane), naive_sobel(plane), atol=1e-9)

    def test_eme_zero_guard(self):
        plane = np.zeros((8, 8))
        plane[0, 0] = 5.0
        assert eme(plane) == pytest.approx(2 * math.log(5.0))
        assert eme(plane) == pytest.approx(naive_eme(plane))
        assert eme(np.full((8, 8), 3.0)) == 0.0

    def test_logamee_guards(self):
        assert logamee(np.zeros((8, 8))) == 0.0
        assert logamee(np.full((8, 8), 7.0)) == 0.0
        plane = np.full((8, 8), 10.0)
        plane[0, 0] = 30.0
        m = 20 / 40
        assert logamee(plane) == pytest.approx(m * math.log(m))

    def test_trimmed_stats(self):
        vals = np.arange(10, dtype=float)  # one sample dropped from each tail
        mu, var = trimmed_stats(vals)
        kept = np.arange(1, 9, dtype=float)
        assert mu == pytest.approx(kept.mean()) and var == pytest.approx(kept.var())

    def test_too_small(self):
        with pytest.raises(ValueError):
            uiqm(np.zeros((7, 16, 3), np.uint8))


class TestProperties:
    @pytest.mark.parametrize("seed", [0, 6])
    def test_horizontal_flip_invariance(self, seed):
        img = color_image(16, 24, seed)
        a, b = uiqm(img), uiqm(img[:, ::-1])
        for f in ("uciqe", "uiqm", "uicm", "uism", "uiconm"):
            assert getattr(a, f) == pytest.approx(getattr(b, f), abs=1e-9), f

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.uint8, st.tuples(st.integers(8, 20), st.integers(8, 20), st.just(3))))
    def test_finite_for_any_8bit_input(self, img):
        assert all(math.isfinite(v) for v in uiqm(img).to_dict().values())


class TestTraceQuality:
    def test_identical_frames_constant(self):
        f = color_image(16, 16, 1)
        series = trace_quality([f] * 4)
        assert all(s == series[0] for s in series)

    def test_stretched_contrast_non_decreasing(self):
        base = np.random.default_rng(2).random((16, 16))
        cons = []
        for scale in (0.1, 0.3, 0.6, 1.0):
            g = (127.5 + (base - 0.5) * 255 * scale).astype(np.uint8)
            cons.append(uciqe_components(np.repeat(g[..., None], 3, axis=2))[1])
        assert all(b >= a for a, b in zip(cons, cons[1:]))

    def test_compositional(self):
        frames = [color_image(16, 16, s) for s in range(8)]
        assert trace_quality(frames) == [uiqm(f) for f in frames]
