import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from selfx.frames import (Frame, ScaleSequence, band_limit, cut, hann_window, load_png,
                          make_grid, read_sequence, resample_bicubic, save_png, splice, to_luma,
                          write_sequence)


def keys_cubic(x, a=-0.5):
    """Scalar piecewise cubic convolution kernel."""
    x = abs(x)
    if x <= 1:
        return (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1
    if x < 2:
        return a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a
    return 0.0


def upsample_oracle(img, factor):
    """Direct per-sample bicubic interpolation with edge replication."""
    h, w = img.shape
    oh, ow = int(math.floor(h * factor + 0.5)), int(math.floor(w * factor + 0.5))
    out = np.zeros((oh, ow))
    for v in range(oh):
        cy = (v + 0.5) * h / oh - 0.5
        for u in range(ow):
            cx = (u + 0.5) * w / ow - 0.5
            acc, wsum = 0.0, 0.0
            for j in range(math.floor(cy) - 2, math.floor(cy) + 4):
                for i in range(math.floor(cx) - 2, math.floor(cx) + 4):
                    k = keys_cubic(j - cy) * keys_cubic(i - cx)
                    acc += k * img[min(max(j, 0), h - 1), min(max(i, 0), w - 1)]
                    wsum += k
            out[v, u] = acc / wsum
    return np.clip(out, 0, 1)


images = arrays(np.float64, st.tuples(st.integers(6, 24), st.integers(6, 24)),
                elements=st.floats(0, 1, allow_nan=False, width=64))


class TestFrame:
    def test_clips_and_freezes(self):
        f = Frame(np.array([[1.5, -0.2], [0.3, 0.4]]), 3)
        assert f.data.min() == 0.0 and f.data.max() == 1.0
        assert (f.width, f.height, f.channels, f.index) == (2, 2, 1, 3)
        with pytest.raises(ValueError):
            f.data[0, 0] = 0.5

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Frame(np.array([[np.nan, 0.0]]))

    def test_luma_weights(self):
        rgb = np.zeros((2, 2, 3))
        rgb[..., 0], rgb[..., 1], rgb[..., 2] = 1.0, 0.5, 0.25
        assert np.allclose(to_luma(rgb), 0.299 + 0.587 * 0.5 + 0.114 * 0.25)


class TestScaleSequence:
    def test_default(self):
        assert ScaleSequence().scales == (1.2, 1.4, 1.7, 2.1, 2.5, 2.9, 3.5)

    @pytest.mark.parametrize("bad", [(), (1.0, 2.0), (2.0, 1.5), (1.5, 1.5)])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            ScaleSequence(bad)


class TestResample:
    def test_identity_factor(self):
        img = np.random.default_rng(0).random((17, 23, 3))
        out = resample_bicubic(img, 1.0)
        assert out.shape == img.shape
        assert np.abs(out - img).max() <= 1e-6

    @pytest.mark.parametrize("factor", [0.3, 0.5, 1.7, 2.0, 3.5])
    def test_constant_preserved(self, factor):
        img = np.full((20, 15), 0.37)
        out = resample_bicubic(img, factor)
        assert out.shape == (int(20 * factor + 0.5), int(15 * factor + 0.5))
        assert np.abs(out - 0.37).max() < 1e-12

    def test_ramp_matches_kernel_formula(self):
        yy, xx = np.mgrid[0:8, 0:8]
        ramp = (xx + 2 * yy) / 21.0
        assert np.abs(resample_bicubic(ramp, 2.0) - upsample_oracle(ramp, 2.0)).max() <= 1e-4

    def test_random_upsample_matches_kernel_formula(self):
        img = np.random.default_rng(1).random((9, 7))
        assert np.abs(resample_bicubic(img, 2.5) - upsample_oracle(img, 2.5)).max() <= 1e-12

    def test_frame_in_frame_out(self):
        f = Frame(np.random.default_rng(2).random((10, 10)), 5)
        out = resample_bicubic(f, 2)
        assert isinstance(out, Frame) and out.index == 5 and out.width == 20

    @pytest.mark.parametrize("factor", [0, -1.0])
    def test_bad_factor(self, factor):
        with pytest.raises(ValueError):
            resample_bicubic(np.zeros((4, 4)), factor)

    @given(images, st.sampled_from([1.2, 1.4, 1.7, 2.1, 2.5, 2.9, 3.5]))
    @settings(max_examples=40, deadline=None)
    def test_round_trip_restores_dims(self, img, f):
        up = resample_bicubic(img, f)
        back = resample_bicubic(up, 1 / f, size=img.shape)
        assert back.shape == img.shape
        assert 0.0 <= back.min() and back.max() <= 1.0

    @given(images, st.floats(0.2, 4.0))
    @settings(max_examples=40, deadline=None)
    def test_range_and_determinism(self, img, f):
        a = resample_bicubic(img, f)
        b = resample_bicubic(img.copy(), f)
        assert np.array_equal(a, b)
        assert np.isfinite(a).all() and a.min() >= 0 and a.max() <= 1


class TestBandLimit:
    def test_constant_unchanged(self):
        img = np.full((33, 41, 3), 0.61)
        assert np.abs(band_limit(img, 2.9) - img).max() <= 1e-6

    def test_checkerboard_loses_energy(self):
        yy, xx = np.mgrid[0:64, 0:64]
        board = ((xx + yy) % 2).astype(float)
        assert band_limit(board, 4).var() < board.var()

    def test_composition(self):
        img = np.random.default_rng(3).random((45, 38))
        expected = resample_bicubic(resample_bicubic(img, 0.5), 2.0, size=img.shape)
        assert np.array_equal(band_limit(img, 2), expected)

    @pytest.mark.parametrize("factor", [1.0, 0.5])
    def test_factor_must_exceed_one(self, factor):
        with pytest.raises(ValueError):
            band_limit(np.zeros((8, 8)), factor)

    @given(images, st.floats(1.05, 4.0))
    @settings(max_examples=40, deadline=None)
    def test_shape_kept_and_variance_not_increased(self, img, f):
        out = band_limit(img, f)
        assert out.shape == img.shape
        assert out.var() <= img.var() + 1e-9


class TestGrid:
    def test_small_grid(self):
        g = make_grid(64, 64, 32, 24)
        assert sorted({x for x, _ in g.origins}) == [0, 24, 32]
        assert sorted({y for _, y in g.origins}) == [0, 24, 32]
        assert g.n == 9

    def test_single_patch(self):
        g = make_grid(32, 32, 32, 24)
        assert g.origins == ((0, 0),) and g.n == 1

    def test_hd_coverage(self):
        g = make_grid(1920, 1080, 32, 24)
        cover = np.zeros((1080, 1920), dtype=np.int32)
        for x, y in g.origins:
            cover[y:y + 32, x:x + 32] += 1
        assert cover.min() >= 1
        assert all(x + 32 <= 1920 and y + 32 <= 1080 for x, y in g.origins)

    def test_patch_too_big(self):
        with pytest.raises(ValueError):
            make_grid(20, 40, 32, 24)

    def test_deterministic(self):
        assert make_grid(100, 77, 32, 24) == make_grid(100, 77, 32, 24)


class TestSplice:
    @given(st.integers(32, 90), st.integers(32, 90), st.integers(8, 31))
    @settings(max_examples=25, deadline=None)
    def test_cut_splice_identity(self, w, h, stride):
        img = np.random.default_rng(w * h + stride).random((h, w, 3))
        grid = make_grid(w, h, 32, stride)
        assert np.abs(splice(cut(img, grid), w, h) - img).max() <= 1e-6

    def test_single_patch_identity(self):
        img = np.random.default_rng(4).random((32, 32))
        assert np.abs(splice([((0, 0), img)], 32, 32) - img).max() <= 1e-15

    def test_two_constant_patches_blend_monotonically(self):
        p = 16
        out = splice([((0, 0), np.zeros((p, p))), ((8, 0), np.ones((p, p)))], 24, 16)
        row = out[5]
        assert np.all(np.diff(row) >= 0)
        assert row[:8].max() == 0.0 and row[16:].min() == 1.0
        assert 0 < row[8] < row[15] < 1
        # closed form in the overlap: normalised raised-cosine weights
        i = np.arange(8, 16)
        w0 = np.sin(np.pi * (i + 0.5) / p) ** 2
        w1 = np.sin(np.pi * (i - 8 + 0.5) / p) ** 2
        assert np.allclose(row[8:16], w1 / (w0 + w1), atol=1e-12)

    def test_hann_positive(self):
        assert hann_window(32).min() > 0

    def test_uncovered_pixel_named(self):
        with pytest.raises(ValueError, match=r"x=16, y=0"):
            splice([((0, 0), np.zeros((16, 16)))], 32, 16)


class TestPng:
    def test_round_trip(self, tmp_path):
        img = np.floor(np.random.default_rng(5).random((12, 9, 3)) * 255) / 255
        save_png(img, tmp_path / "a.png")
        back = load_png(tmp_path / "a.png", 7)
        assert back.index == 7 and np.array_equal(back.data, img)

    def test_sequence_order_and_missing(self, tmp_path):
        frames = [np.full((4, 4), v / 255) for v in (10, 20, 30)]
        write_sequence(frames, tmp_path)
        seq = read_sequence(tmp_path)
        assert [f.index for f in seq] == [0, 1, 2]
        assert [round(f.data[0, 0, 0] * 255) for f in seq] == [10, 20, 30]
        with pytest.raises(OSError, match="frame 5"):
            read_sequence(tmp_path, [5])
        with pytest.raises(FileNotFoundError):
            read_sequence(tmp_path / "nope")
