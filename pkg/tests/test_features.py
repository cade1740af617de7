import numpy as np
import pytest

from coparse import features
from coparse.errors import DegenerateRegionError, PatchTooSmallError

from conftest import make_image


def full_mask(image):
    return np.ones(image.pixels.shape[:2], dtype=bool)


class TestRegionHistogram:
    def test_uniform_midgray(self):
        image = make_image(np.zeros((8, 8), dtype=int))  # pixels default to 128
        hist = features.region_histogram(image, full_mask(image))
        color, grad = hist[:24], hist[24:]
        # value 128 falls in bin 4 of each 8-bin channel histogram
        expected_bins = {4, 8 + 4, 16 + 4}
        assert set(np.flatnonzero(color)) == expected_bins
        assert np.allclose(color[sorted(expected_bins)], 0.5 / 3)
        # constant image has zero gradients: uniform fallback
        assert np.allclose(grad, 0.5 / 16)

    def test_sums_to_one(self):
        rng = np.random.default_rng(5)
        pixels = rng.integers(0, 256, size=(10, 12, 3), dtype=np.uint8)
        image = make_image(np.zeros((10, 12), dtype=int), pixels=pixels)
        mask = np.zeros((10, 12), dtype=bool)
        mask[2:7, 3:9] = True
        hist = features.region_histogram(image, mask)
        assert abs(hist.sum() - 1.0) <= 1e-9
        assert (hist >= 0).all()

    def test_black_white_split(self):
        pixels = np.zeros((8, 8, 3), dtype=np.uint8)
        pixels[:, 4:] = 255
        image = make_image(np.zeros((8, 8), dtype=int), pixels=pixels)
        hist = features.region_histogram(image, full_mask(image))
        color = hist[:24]
        # per channel: equal mass in the lowest and highest intensity bins
        for ch in range(3):
            sub = color[ch * 8:(ch + 1) * 8]
            assert sub[0] == pytest.approx(sub[7])
            assert sub[1:7].sum() == 0.0

    def test_empty_mask_rejected(self):
        image = make_image(np.zeros((4, 4), dtype=int))
        with pytest.raises(DegenerateRegionError):
            features.region_histogram(image, np.zeros((4, 4), dtype=bool))

    def test_matches_direct_binning_oracle(self):
        rng = np.random.default_rng(9)
        pixels = rng.integers(0, 256, size=(9, 9, 3), dtype=np.uint8)
        image = make_image(np.zeros((9, 9), dtype=int), pixels=pixels)
        mask = rng.uniform(size=(9, 9)) < 0.5
        mask[0, 0] = True
        hist = features.region_histogram(image, mask)
        # independent oracle: count color bins by explicit iteration
        expected = np.zeros(24)
        for r in range(9):
            for c in range(9):
                if mask[r, c]:
                    for ch in range(3):
                        expected[ch * 8 + int(pixels[r, c, ch]) * 8 // 256] += 1
        expected *= 0.5 / expected.sum()
        assert np.allclose(hist[:24], expected)


class TestChiSquare:
    def test_identity_is_zero(self):
        h = np.full(40, 1.0 / 40)
        assert features.chi_square(h, h) == 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(size=40)
        a /= a.sum()
        b = rng.uniform(size=40)
        b /= b.sum()
        assert features.chi_square(a, b) == pytest.approx(features.chi_square(b, a))

    def test_disjoint_support_is_one(self):
        a = np.zeros(40)
        a[0] = 1.0
        b = np.zeros(40)
        b[1] = 1.0
        assert features.chi_square(a, b) == pytest.approx(1.0)

    def test_bounded_by_one(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            a = rng.uniform(size=40)
            a /= a.sum()
            b = rng.uniform(size=40)
            b /= b.sum()
            d = features.chi_square(a, b)
            assert 0.0 <= d <= 1.0 + 1e-12


class TestHog:
    def test_constant_patch_all_zero(self):
        desc = features.hog(np.full((16, 16), 77.0), (2, 2))
        assert desc.shape == (36,)
        assert np.all(desc == 0.0)

    def test_template_4x4_length(self):
        desc = features.hog(np.random.default_rng(0).uniform(size=(32, 32)), (4, 4))
        assert desc.size == 3 * 3 * 36

    def test_vertical_step_edge_horizontal_bin(self):
        patch = np.zeros((16, 16))
        patch[:, 8:] = 255.0
        desc = features.hog(patch, (2, 2)).reshape(4, 9)
        # per cell: all gradient mass lies in the horizontal-gradient bin 0
        mass = desc.sum(axis=1)
        assert np.allclose(desc[:, 0], mass)

    def test_intensity_offset_invariance(self):
        rng = np.random.default_rng(8)
        patch = rng.uniform(0, 200, size=(24, 24))
        a = features.hog(patch, (3, 3))
        b = features.hog(patch + 30.0, (3, 3))
        assert np.allclose(a, b)

    def test_small_template_rejected(self):
        with pytest.raises(PatchTooSmallError):
            features.hog(np.zeros((16, 16)), (1, 4))

    def test_tiny_patch_rejected(self):
        with pytest.raises(PatchTooSmallError):
            features.hog(np.zeros((1, 5)), (2, 2))


class TestTemplateFromBbox:
    def test_square(self):
        assert features.template_from_bbox(40, 40) == (8, 8)

    def test_tall(self):
        assert features.template_from_bbox(80, 40) == (8, 4)

    def test_wide_clamps_minimum(self):
        assert features.template_from_bbox(5, 100) == (2, 8)


class TestResize:
    def test_bilinear_identity(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(size=(7, 9))
        assert np.allclose(features.bilinear_resize(img, 7, 9), img)

    def test_nearest_mask_identity(self):
        mask = np.random.default_rng(2).uniform(size=(5, 6)) < 0.5
        assert (features.nearest_resize_mask(mask, 5, 6) == mask).all()

    def test_bilinear_constant_preserved(self):
        img = np.full((5, 5), 3.25)
        out = features.bilinear_resize(img, 13, 7)
        assert np.allclose(out, 3.25)
