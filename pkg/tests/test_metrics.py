import numpy as np
import pytest
from skimage.color import deltaE_ciede2000
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from aosr import metrics
from aosr.errors import DimensionError

from ciede_vectors import SHARMA


def random_pair(rng, size=32):
    x = rng.random((size, size, 3))
    y = np.clip(x + rng.normal(0, rng.uniform(0.01, 0.2), x.shape), 0, 1)
    return x, y


class TestPsnr:
    def test_uniform_offset(self):
        x = np.zeros((4, 4, 3))
        assert metrics.psnr(x, x + 0.5) == pytest.approx(10 * np.log10(4), abs=1e-12)

    def test_identical_sentinel(self):
        x = np.random.default_rng(0).random((4, 4, 3))
        assert metrics.psnr_detail(x, x) == (metrics.PSNR_SENTINEL, True)

    def test_matches_skimage(self, rng):
        for _ in range(20):
            x, y = random_pair(rng)
            assert abs(metrics.psnr(x, y) - peak_signal_noise_ratio(y, x, data_range=1.0)) <= 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            metrics.psnr(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


class TestSsim:
    def test_identical_is_one(self, rng):
        x = rng.random((16, 16, 3))
        assert metrics.ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_symmetric(self, rng):
        x, y = random_pair(rng)
        assert metrics.ssim(x, y) == pytest.approx(metrics.ssim(y, x), abs=1e-14)

    def test_window_normalised(self):
        g = metrics.gaussian_window()
        assert g.shape == (11,) and g.sum() == pytest.approx(1.0)

    def test_matches_skimage(self, rng):
        for _ in range(20):
            x, y = random_pair(rng)
            ref = structural_similarity(x, y, data_range=1.0, channel_axis=2, gaussian_weights=True, sigma=1.5,
                                        use_sample_covariance=False)
            assert abs(metrics.ssim(x, y) - ref) <= 1e-4

    def test_too_small(self):
        with pytest.raises(DimensionError):
            metrics.ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


class TestCiede2000:
    @pytest.mark.parametrize("lab1,lab2,expected", SHARMA)
    def test_published_vectors(self, lab1, lab2, expected):
        assert float(metrics.ciede2000(np.array(lab1), np.array(lab2))) == pytest.approx(expected, abs=1e-4)

    def test_vectors_symmetric(self):
        a = np.array([v[0] for v in SHARMA])
        b = np.array([v[1] for v in SHARMA])
        np.testing.assert_allclose(metrics.ciede2000(a, b), metrics.ciede2000(b, a), atol=1e-12)

    def test_matches_skimage_on_same_lab(self, rng):
        x, y = random_pair(rng)
        la, lb = metrics.srgb_to_lab(x), metrics.srgb_to_lab(y)
        np.testing.assert_allclose(metrics.ciede2000(la, lb), deltaE_ciede2000(la, lb), atol=1e-8)

    def test_lab_of_reference_colours(self):
        lab = metrics.srgb_to_lab(np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
        np.testing.assert_allclose(lab[0], [100, 0, 0], atol=1e-3)
        np.testing.assert_allclose(lab[1], [0, 0, 0], atol=1e-9)
        np.testing.assert_allclose(lab[2], [53.24, 80.09, 67.20], atol=0.02)

    def test_identical_images_zero(self, rng):
        x = rng.random((4, 4, 3))
        assert metrics.ciede2000_image(x, x) == 0.0


def test_compare_identical(rng):
    x = rng.random((16, 16, 3))
    r = metrics.compare(x, x)
    assert (r.psnr_db, r.ssim, r.ciede2000, r.identical) == (99.0, pytest.approx(1.0), 0.0, True)
