import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flpr.degrade import (
    DegradeParams,
    bilinear_resize,
    blockwise_dct,
    blockwise_idct,
    degrade_pipeline,
    downsampled_height,
    jpeg_degrade,
    normalize,
)
from flpr.plates import render_plate, sample_plate_string
from flpr.qtables import QfOutOfRange, standard_qtable

UNIT = np.ones((8, 8), dtype=int)


def naive_jpeg(img, q):
    """Straight-line scalar re-implementation used as an oracle."""
    h, w = img.shape
    H, W = math.ceil(h / 8) * 8, math.ceil(w / 8) * 8
    src = [[img[min(y, h - 1)][min(x, w - 1)] * 255.0 - 128.0 for x in range(W)] for y in range(H)]
    out = [[0.0] * W for _ in range(H)]

    def c(k):
        return math.sqrt(1 / 8) if k == 0 else math.sqrt(2 / 8)

    for by in range(0, H, 8):
        for bx in range(0, W, 8):
            coef = [[0.0] * 8 for _ in range(8)]
            for u in range(8):
                for v in range(8):
                    s = 0.0
                    for y in range(8):
                        for x in range(8):
                            s += (src[by + y][bx + x] * math.cos((2 * y + 1) * u * math.pi / 16)
                                  * math.cos((2 * x + 1) * v * math.pi / 16))
                    val = c(u) * c(v) * s / q[u][v]
                    r = math.floor(abs(val) + 0.5)
                    coef[u][v] = math.copysign(r, val) * q[u][v]
            for y in range(8):
                for x in range(8):
                    s = 0.0
                    for u in range(8):
                        for v in range(8):
                            s += (c(u) * c(v) * coef[u][v] * math.cos((2 * y + 1) * u * math.pi / 16)
                                  * math.cos((2 * x + 1) * v * math.pi / 16))
                    out[by + y][bx + x] = min(255.0, max(0.0, s + 128.0)) / 255.0
    return np.array([row[:w] for row in out[:h]])


@pytest.fixture(scope="module")
def plates():
    return [render_plate(sample_plate_string(s)) for s in range(100)]


class TestResize:
    def test_same_size_identity(self):
        img = np.random.default_rng(0).random((13, 17))
        np.testing.assert_array_equal(bilinear_resize(img, 17, 13), img)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 60), st.integers(1, 60))
    def test_constant_preserved(self, w, h):
        out = bilinear_resize(np.full((7, 11), 0.37), w, h)
        assert out.shape == (h, w)
        np.testing.assert_allclose(out, 0.37, atol=1e-15)

    def test_two_pixel_ramp(self):
        out = bilinear_resize(np.array([[0.0, 1.0]]), 4, 1)[0]
        # half-pixel centres: sources -0.25, 0.25, 0.75, 1.25 clamped to [0, 1]
        np.testing.assert_allclose(out, [0.0, 0.25, 0.75, 1.0])
        assert np.all(np.diff(out) >= 0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 1000))
    def test_stays_in_unit_range(self, w, h, seed):
        img = np.random.default_rng(seed).random((9, 14))
        out = bilinear_resize(img, w, h)
        assert out.min() >= 0 and out.max() <= 1

    def test_rejects_empty_target(self):
        with pytest.raises(ValueError):
            bilinear_resize(np.ones((3, 3)), 0, 3)


class TestDct:
    def test_constant_block_is_dc_only(self):
        c = blockwise_dct(np.full((8, 8), 128.0))
        assert c[0, 0] == pytest.approx(1024.0)
        c[0, 0] = 0
        np.testing.assert_allclose(c, 0, atol=1e-10)

    def test_orthonormal(self):
        x = np.random.default_rng(1).normal(size=(8, 8)) * 100
        assert abs(np.linalg.norm(blockwise_dct(x)) - np.linalg.norm(x)) < 1e-10

    def test_round_trip(self):
        x = np.random.default_rng(2).normal(size=(5, 8, 8)) * 100
        assert np.max(np.abs(blockwise_idct(blockwise_dct(x)) - x)) < 1e-10


class TestJpeg:
    def test_matches_naive_oracle(self):
        img = np.random.default_rng(3).random((16, 16))
        q = standard_qtable(10)
        np.testing.assert_allclose(jpeg_degrade(img, q), naive_jpeg(img, q.tolist()), atol=1e-9)

    def test_matches_naive_oracle_with_padding(self):
        img = render_plate(sample_plate_string(4))[5:18, 30:51]
        q = standard_qtable(37)
        np.testing.assert_allclose(jpeg_degrade(img, q), naive_jpeg(img, q.tolist()), atol=1e-9)

    def test_unit_table_near_identity(self, plates):
        worst = max(np.max(np.abs(jpeg_degrade(p, UNIT) - p)) for p in plates)
        assert worst < 2 / 255

    def test_unit_table_one_level_claim_does_not_hold(self, plates):
        # coefficient rounding error is spread over the block; it can exceed one level
        worst = max(np.max(np.abs(jpeg_degrade(p, UNIT) - p)) for p in plates)
        assert worst > 1 / 255

    @pytest.mark.parametrize("qf", [1, 10, 50, 90, 100])
    @pytest.mark.parametrize("value", [0.0, 0.37, 0.5, 1.0])
    def test_constant_image_stays_constant(self, qf, value):
        img = np.full((20, 12), value)
        out = jpeg_degrade(img, standard_qtable(qf))
        assert np.ptp(out) < 1e-9
        step = standard_qtable(qf)[0, 0]
        assert abs(out[0, 0] - value) <= step / 16 / 255 + 1e-12
        if qf == 100:
            assert abs(out[0, 0] - value) < 1 / 255

    @pytest.mark.parametrize("qf", [1, 10, 50, 90])
    def test_idempotent_on_constant_images(self, qf):
        q = standard_qtable(qf)
        once = jpeg_degrade(np.full((16, 16), 0.63), q)
        np.testing.assert_allclose(jpeg_degrade(once, q), once, atol=1e-9)

    def test_output_size_and_range(self):
        img = np.random.default_rng(5).random((11, 29))
        out = jpeg_degrade(img, standard_qtable(5))
        assert out.shape == img.shape
        assert out.min() >= 0 and out.max() <= 1


class TestPipeline:
    def test_params_validated(self):
        with pytest.raises(ValueError):
            DegradeParams(19, 50)
        with pytest.raises(QfOutOfRange):
            DegradeParams(50, 0)

    def test_height_keeps_ratio(self):
        assert downsampled_height(40, 180, 20) == 4
        assert downsampled_height(40, 180, 180) == 40
        assert downsampled_height(40, 180, 27) == 6
        assert downsampled_height(2, 180, 20) == 1

    def test_mildest_setting_is_near_identity(self, plates):
        for p in plates[:20]:
            out = degrade_pipeline(p, DegradeParams(180, 100))
            assert np.max(np.abs(out - p)) < 2 / 255

    def test_deterministic(self, plates):
        prm = DegradeParams(37, 23, 5)
        np.testing.assert_array_equal(degrade_pipeline(plates[0], prm), degrade_pipeline(plates[0], prm))

    def test_strong_degradation_is_visible(self, plates):
        mae = np.mean([np.mean(np.abs(degrade_pipeline(p, DegradeParams(20, 1)) - p)) for p in plates])
        assert mae > 0.02

    def test_mse_ordering(self, plates):
        hard = np.mean([np.mean((degrade_pipeline(p, DegradeParams(20, 1)) - p) ** 2) for p in plates])
        easy = np.mean([np.mean((degrade_pipeline(p, DegradeParams(180, 100)) - p) ** 2) for p in plates])
        assert hard > easy

    @settings(max_examples=25, deadline=None)
    @given(st.integers(20, 180), st.integers(1, 100), st.integers(0, 10**6))
    def test_output_invariants(self, r_w, qf, seed):
        img = render_plate(sample_plate_string(seed))
        out = degrade_pipeline(img, DegradeParams(r_w, qf, seed))
        assert out.shape == (40, 180)
        assert out.min() >= 0 and out.max() <= 1

    def test_normalize_snaps_to_8_bit(self):
        out = normalize(np.array([[-0.2, 0.5, 1.3]]))
        np.testing.assert_allclose(out * 255, np.round(out * 255))
        assert out.min() == 0 and out.max() == 1
