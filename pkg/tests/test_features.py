import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pvscreen.features import (
    FEATURE_NAMES, GLCM_OFFSETS, FeatureVector, color_histogram_entropy, edge_density, extract_features,
    glcm, glcm_features, majority_smooth, normalized_area, otsu_threshold, quantize, read_feature_csv,
    segment_defect, sobel_magnitude, write_feature_csv,
)
from pvscreen.imaging import RgbImage
from pvscreen.taxonomy import DefectClass


def gray_image(gray):
    return RgbImage(np.repeat(np.asarray(gray, dtype=np.float64)[..., None], 3, axis=2))


def brute_otsu_variances(gray, levels=256):
    q = quantize(gray, levels).ravel().tolist()
    n = len(q)
    out = []
    for t in range(levels - 1):
        lo = [v for v in q if v <= t]
        hi = [v for v in q if v > t]
        if not lo or not hi:
            out.append(0.0)
            continue
        w0, w1 = len(lo) / n, len(hi) / n
        out.append(w0 * w1 * (sum(lo) / len(lo) - sum(hi) / len(hi)) ** 2)
    return out


def brute_glcm(q, mask, levels):
    h, w = q.shape
    counts = [[0] * levels for _ in range(levels)]
    pairs = 0
    for dr, dc in GLCM_OFFSETS:
        for r in range(h):
            for c in range(w):
                r2, c2 = r + dr, c + dc
                if 0 <= r2 < h and 0 <= c2 < w and mask[r, c] and mask[r2, c2]:
                    counts[q[r, c]][q[r2, c2]] += 1
                    counts[q[r2, c2]][q[r, c]] += 1
                    pairs += 1
    return np.array(counts), pairs


class TestSegmentation:
    def test_clean_gives_empty_mask(self, random_image):
        mask = segment_defect(random_image(), DefectClass.CLEAN)
        assert mask.dtype == bool and not mask.any()

    def test_constant_image(self):
        assert not segment_defect(gray_image(np.full((10, 10), 0.4)), DefectClass.SOILING).any()

    @pytest.mark.parametrize("square_value", [0.0, 1.0])
    def test_square_on_flat_field(self, square_value):
        gray = np.full((20, 20), 0.5)
        gray[5:11, 8:14] = square_value
        mask = segment_defect(gray_image(gray), DefectClass.PHYSICAL_DAMAGE)
        expected = np.zeros((20, 20), dtype=bool)
        expected[5:11, 8:14] = True
        for r, c in [(5, 8), (5, 13), (10, 8), (10, 13)]:
            expected[r, c] = False  # convex corners lose the 3x3 vote
        np.testing.assert_array_equal(mask, expected)

    def test_balanced_halves_pick_dark(self):
        gray = np.zeros((8, 8))
        gray[:, 4:] = 1.0
        mask = segment_defect(gray_image(gray), DefectClass.SOILING)
        np.testing.assert_array_equal(mask, gray == 0.0)

    def test_majority_removes_isolated_pixel(self):
        m = np.zeros((5, 5), dtype=bool)
        m[2, 2] = True
        assert not majority_smooth(m).any()
        assert majority_smooth(np.ones((4, 4), dtype=bool)).all()

    def test_otsu_matches_brute_force(self, rng):
        for _ in range(5):
            gray = np.clip(np.r_[rng.normal(0.3, 0.05, 60), rng.normal(0.7, 0.08, 40)], 0, 1).reshape(10, 10)
            var = brute_otsu_variances(gray)
            t = otsu_threshold(gray)
            assert var[t] == pytest.approx(max(var), rel=1e-12)
            assert t == min(i for i, v in enumerate(var) if v >= max(var) * (1 - 1e-12))

    def test_otsu_two_levels(self):
        gray = np.array([[0.0, 0.0], [1.0, 1.0]])
        assert otsu_threshold(gray) == 0


class TestArea:
    def test_values(self):
        m = np.zeros((4, 5), dtype=bool)
        assert normalized_area(m) == 0.0
        m[0, :2] = True
        assert normalized_area(m) == 0.1
        assert normalized_area(np.ones((3, 3), dtype=bool)) == 1.0


class TestEdges:
    def test_vertical_step_exact(self):
        gray = np.zeros((6, 8))
        gray[:, 4:] = 1.0
        expected = np.zeros((6, 8))
        expected[:, 3:5] = 4.0
        np.testing.assert_allclose(sobel_magnitude(gray), expected, atol=1e-12)

    def test_diagonal_gradient(self):
        yy, xx = np.mgrid[0:7, 0:7].astype(np.float64)
        mag = sobel_magnitude(0.1 * xx + 0.2 * yy)
        # interior: kernel sum |weights| over one axis is 8 per unit slope
        np.testing.assert_allclose(mag[1:-1, 1:-1], math.hypot(0.8, 1.6), atol=1e-12)

    def test_density(self):
        gray = np.zeros((6, 8))
        gray[:, 4:] = 1.0
        img = gray_image(gray)
        full = np.ones((6, 8), dtype=bool)
        assert edge_density(img, full) == pytest.approx(12 / 48)
        assert edge_density(img, np.zeros((6, 8), dtype=bool)) == 0.0
        assert edge_density(gray_image(np.full((5, 5), 0.7)), np.ones((5, 5), dtype=bool)) == 0.0

    def test_too_small(self):
        with pytest.raises(ValueError):
            edge_density(gray_image(np.zeros((2, 5))), np.ones((2, 5), dtype=bool))


class TestEntropy:
    def test_uniform_region(self):
        assert color_histogram_entropy(gray_image(np.full((4, 4), 0.3)), np.ones((4, 4), dtype=bool)) == 0.0

    def test_every_bin_once(self):
        gray = ((np.arange(32) + 0.5) / 32).reshape(4, 8)
        assert color_histogram_entropy(gray_image(gray), np.ones((4, 8), dtype=bool)) == pytest.approx(5.0, abs=1e-12)

    def test_two_equal_bins(self):
        gray = np.array([[0.1, 0.9], [0.1, 0.9]])
        assert color_histogram_entropy(gray_image(gray), np.ones((2, 2), dtype=bool)) == pytest.approx(1.0, abs=1e-12)

    def test_empty_mask(self, random_image):
        img = random_image()
        assert color_histogram_entropy(img, np.zeros((img.height, img.width), dtype=bool)) == 0.0

    def test_permutation_invariant(self, rng):
        data = rng.random((6, 6, 3))
        mask = rng.random((6, 6)) < 0.5
        perm = rng.permutation(36)
        shuffled = data.reshape(36, 3)[perm].reshape(6, 6, 3)
        smask = mask.ravel()[perm].reshape(6, 6)
        assert color_histogram_entropy(RgbImage(data), mask) == pytest.approx(
            color_histogram_entropy(RgbImage(shuffled), smask), abs=1e-12)


class TestGlcm:
    def test_constant_region(self):
        contrast, energy, homogeneity, corr = glcm_features(gray_image(np.full((5, 5), 0.3)), np.ones((5, 5), dtype=bool))
        assert (contrast, energy, homogeneity, corr) == (0.0, 1.0, 1.0, 0.0)

    def test_fallback_under_two_pairs(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[2, 2] = True
        assert glcm_features(gray_image(np.random.default_rng(0).random((5, 5))), mask) == (0.0, 1.0, 1.0, 0.0)

    def test_checkerboard_matches_brute_force(self):
        gray = (np.indices((6, 6)).sum(axis=0) % 2).astype(np.float64) * 0.99
        mask = np.ones((6, 6), dtype=bool)
        counts, pairs = glcm(gray, mask, 8)
        ref, ref_pairs = brute_glcm(quantize(gray, 8), mask, 8)
        np.testing.assert_array_equal(counts, ref)
        assert pairs == ref_pairs == 30 + 30 + 25 + 25
        contrast, energy, homogeneity, corr = glcm_features(gray_image(gray), mask)
        # horizontal/vertical pairs differ by 7 levels, diagonal ones agree
        assert contrast == pytest.approx(49 * 60 / 110, abs=1e-12)
        assert corr == pytest.approx((50 - 60) / 110, abs=1e-12)

    def test_random_matches_brute_force(self, rng):
        gray = rng.random((7, 9))
        mask = rng.random((7, 9)) < 0.7
        counts, pairs = glcm(gray, mask)
        ref, ref_pairs = brute_glcm(quantize(gray, 8), mask, 8)
        np.testing.assert_array_equal(counts, ref)
        assert pairs == ref_pairs
        assert np.array_equal(counts, counts.T)

    def test_transpose_invariant(self, rng):
        gray = rng.random((8, 8))
        mask = np.ones((8, 8), dtype=bool)
        a = glcm_features(gray_image(gray), mask)
        b = glcm_features(gray_image(gray.T), mask)
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestExtract:
    def test_clean_vector(self, random_image):
        vec = extract_features(random_image(), DefectClass.CLEAN)
        assert vec == FeatureVector(0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0)

    def test_names(self):
        assert FEATURE_NAMES == ["normalized_area", "edge_density", "color_entropy", "glcm_contrast",
                                 "glcm_energy", "glcm_homogeneity", "glcm_correlation"]

    def test_custom_segmenter(self, random_image):
        img = random_image(6, 6)
        vec = extract_features(img, DefectClass.DUST, lambda im, c: np.ones((6, 6), dtype=bool))
        assert vec.normalized_area == 1.0

    def test_ranges_on_random_images(self, rng):
        for k in range(100):
            h, w = rng.integers(3, 20, 2)
            img = RgbImage(rng.random((h, w, 3)) ** rng.uniform(0.3, 3.0))
            v = extract_features(img, DefectClass(int(rng.integers(0, 9))))
            assert 0.0 <= v.normalized_area <= 1.0
            assert 0.0 <= v.edge_density <= 1.0
            assert 0.0 <= v.color_entropy <= 5.0 + 1e-12
            assert 0.0 <= v.glcm_contrast <= 49.0
            assert 0.0 < v.glcm_energy <= 1.0
            assert 0.0 < v.glcm_homogeneity <= 1.0
            assert -1.0 <= v.glcm_correlation <= 1.0
            assert np.all(np.isfinite(v.as_array()))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_deterministic(self, seed):
        img = RgbImage(np.random.default_rng(seed).random((9, 11, 3)))
        assert extract_features(img, DefectClass.SOILING) == extract_features(img, DefectClass.SOILING)

    def test_vector_roundtrip(self):
        v = FeatureVector(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, -0.7)
        assert FeatureVector.from_array(v.as_array()) == v


class TestFeatureCsv:
    def test_roundtrip(self, tmp_path, rng):
        rows = [(f"dust/img_{k}.png", k % 9, FeatureVector.from_array(rng.random(7))) for k in range(5)]
        write_feature_csv(tmp_path / "f.csv", rows)
        assert read_feature_csv(tmp_path / "f.csv") == rows

    def test_bad_header(self, tmp_path):
        (tmp_path / "f.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_feature_csv(tmp_path / "f.csv")
