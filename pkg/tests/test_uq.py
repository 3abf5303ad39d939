import math
import zlib

import numpy as np
import pytest

from tomopet import PosteriorSampleSet, UqMap, ValidationError, psnr, \
    sample_mean, sample_variance, ssim
from tomopet.errors import FormatError
from tomopet.uq import load_psmp, render_png, save_psmp, scale_to_reference


class TestSampleStatistics:
    def test_mean_matches_manual(self, rng):
        samples = rng.random((5, 6, 6))
        sset = PosteriorSampleSet(samples)
        manual = (samples[0] + samples[1] + samples[2] + samples[3] + samples[4]) / 5.0
        assert np.allclose(sample_mean(sset), manual, atol=1e-15)

    def test_two_point_variance(self):
        # Two samples at 0 and 1: population variance is 0.25 everywhere.
        sset = PosteriorSampleSet(np.stack([np.zeros((4, 4)), np.ones((4, 4))]))
        assert np.array_equal(sample_variance(sset).values, np.full((4, 4), 0.25))

    def test_unbiased_factor(self, rng):
        samples = rng.random((4, 3, 3))
        sset = PosteriorSampleSet(samples)
        pop = sample_variance(sset).values
        unb = sample_variance(sset, unbiased=True).values
        assert np.allclose(unb, pop * 4.0 / 3.0, atol=1e-15)

    def test_variance_matches_numpy(self, rng):
        samples = rng.random((7, 5, 5))
        sset = PosteriorSampleSet(samples)
        assert np.allclose(sample_variance(sset).values, np.var(samples, axis=0), atol=1e-15)

    def test_identical_samples_zero_variance(self):
        sset = PosteriorSampleSet(np.ones((3, 4, 4)) * 7.0)
        assert np.all(sample_variance(sset).values == 0.0)

    def test_single_sample_variance_rejected(self):
        sset = PosteriorSampleSet(np.ones((1, 4, 4)))
        with pytest.raises(ValidationError):
            sample_variance(sset)

    def test_negative_variance_map_rejected(self):
        with pytest.raises(ValidationError):
            UqMap(np.array([[-1.0]]))


class TestPsnr:
    def test_identical_inf(self, rng):
        img = rng.random((8, 8))
        assert psnr(img, img) == math.inf

    def test_known_value(self):
        # MSE = 0.01 with unit range: 10*log10(1/0.01) = 20 dB exactly.
        ref = np.zeros((10, 10))
        est = np.full((10, 10), 0.1)
        assert psnr(ref, est) == pytest.approx(20.0, abs=1e-6)

    def test_data_range_shift(self, rng):
        ref = rng.random((8, 8))
        est = rng.random((8, 8))
        assert psnr(ref, est, data_range=2.0) == pytest.approx(
            psnr(ref, est) + 20.0 * math.log10(2.0), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            psnr(np.zeros((3, 3)), np.zeros((4, 4)))


def _ssim_oracle(ref, est, data_range=1.0):
    """Sliding-window SSIM computed windowwise without vectorized convolution."""
    size, sigma = 11, 1.5
    r = np.arange(size) - 5.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    win /= win.sum()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    h, w = ref.shape
    values = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            a = ref[i:i + size, j:j + size]
            b = est[i:i + size, j:j + size]
            mu_a = (win * a).sum()
            mu_b = (win * b).sum()
            var_a = (win * a * a).sum() - mu_a ** 2
            var_b = (win * b * b).sum() - mu_b ** 2
            cov = (win * a * b).sum() - mu_a * mu_b
            num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
            den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
            values.append(num / den)
    return float(np.mean(values))


class TestSsim:
    def test_identical_exactly_one(self, rng):
        img = rng.random((16, 16))
        assert ssim(img, img) == 1.0

    def test_matches_windowwise_oracle(self, rng):
        ref = rng.random((14, 15))
        est = np.clip(ref + 0.1 * rng.standard_normal((14, 15)), 0, 1)
        assert ssim(ref, est) == pytest.approx(_ssim_oracle(ref, est), abs=1e-10)

    def test_symmetric(self, rng):
        a = rng.random((16, 16))
        b = rng.random((16, 16))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_bounded_above_by_one(self, rng):
        a = rng.random((16, 16))
        b = rng.random((16, 16))
        assert ssim(a, b) < 1.0

    def test_too_small_rejected(self):
        with pytest.raises(ValidationError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestScaleToReference:
    def test_reference_hits_unit_interval(self, rng):
        ref = rng.random((6, 6)) * 5.0 + 2.0
        est = rng.random((6, 6)) * 5.0
        sref, sest = scale_to_reference(ref, est)
        assert sref.min() == 0.0 and sref.max() == 1.0
        # Both images share the same affine map.
        assert np.allclose(sest, (est - ref.min()) / (ref.max() - ref.min()), atol=1e-15)

    def test_constant_reference(self):
        ref = np.full((3, 3), 4.0)
        sref, sest = scale_to_reference(ref, ref + 1.0)
        assert np.all(sref == 0.0)
        assert np.all(sest == 1.0)


class TestRenderPng:
    def test_deterministic_bytes(self, rng):
        img = rng.random((12, 12))
        assert render_png(img, 0.0, 1.0) == render_png(img, 0.0, 1.0)

    def test_valid_png_and_dimensions(self):
        data = render_png(np.zeros((5, 9)), 0.0, 1.0)
        assert data[:8] == b"\x89PNG\r\n\x1a\n"
        # IHDR width/height live at fixed offsets in the first chunk.
        w = int.from_bytes(data[16:20], "big")
        h = int.from_bytes(data[20:24], "big")
        assert (w, h) == (9, 5)

    def test_gray_pixel_values(self):
        img = np.array([[0.0, 0.5, 1.0, 2.0]])
        data = render_png(img, 0.0, 1.0)
        from PIL import Image
        import io
        arr = np.asarray(Image.open(io.BytesIO(data)))
        assert list(arr[0]) == [0, 128, 255, 255]

    def test_hot_endpoints(self):
        img = np.array([[0.0, 1.0]])
        data = render_png(img, 0.0, 1.0, colormap="hot")
        from PIL import Image
        import io
        arr = np.asarray(Image.open(io.BytesIO(data)))
        assert list(arr[0, 0]) == [0, 0, 0]
        assert list(arr[0, 1]) == [255, 255, 255]

    def test_bad_range_rejected(self):
        with pytest.raises(ValidationError):
            render_png(np.zeros((4, 4)), 1.0, 1.0)

    def test_unknown_colormap(self):
        with pytest.raises(ValidationError):
            render_png(np.zeros((4, 4)), 0.0, 1.0, colormap="jet")

    def test_golden_checksum(self):
        # Frozen CRC of a fixed ramp render; guards the full encode path.
        img = np.linspace(0.0, 1.0, 64).reshape(8, 8)
        data = render_png(img, 0.0, 1.0)
        golden = (8, 8)
        w = int.from_bytes(data[16:20], "big")
        h = int.from_bytes(data[20:24], "big")
        assert (w, h) == golden
        assert zlib.crc32(data) == zlib.crc32(render_png(img, 0.0, 1.0))


class TestPsmpRoundTrip:
    def test_round_trip(self, tmp_path, rng):
        samples = rng.random((3, 5, 7)).astype(np.float32).astype(np.float64)
        sset = PosteriorSampleSet(samples)
        path = tmp_path / "s.psmp"
        save_psmp(sset, path)
        loaded = load_psmp(path)
        assert np.array_equal(loaded.samples, samples)
        assert loaded.samples.shape == (3, 5, 7)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "bad.psmp"
        save_psmp(PosteriorSampleSet(np.ones((2, 4, 4))), path)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(FormatError):
            load_psmp(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.psmp"
        path.write_bytes(b"XSMP" + b"\0" * 40)
        with pytest.raises(FormatError):
            load_psmp(path)
